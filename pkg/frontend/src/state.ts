// Explorer state and its pure mapping onto API request bodies.
// The same state must always produce byte-identical request JSON, and
// parameters stay clamped to the ranges advertised by /presets.

import type { AllocateBody, Preset, ScenarioBody, SimulateBody } from "./types.js";

export interface ExplorerState {
  preset: Preset;
  params: Record<string, number>;
  n: number;
  seed: number;
  methods: string[];
  estimators: string[];
  reps: number;
}

export const MAX_QUICK_REPS = 500;

export function clampParam(spec: { min: number; max: number }, value: number): number {
  if (Number.isNaN(value)) return spec.min;
  return Math.min(spec.max, Math.max(spec.min, value));
}

export function clampState(state: ExplorerState): ExplorerState {
  const params: Record<string, number> = {};
  for (const spec of state.preset.params) {
    params[spec.name] = clampParam(spec, state.params[spec.name] ?? spec.default);
  }
  const n = Math.max(1, Math.min(state.preset.N, Math.round(state.n)));
  const reps = Math.max(1, Math.min(MAX_QUICK_REPS, Math.round(state.reps)));
  return { ...state, params, n, reps };
}

export function defaultState(preset: Preset): ExplorerState {
  const params: Record<string, number> = {};
  for (const spec of preset.params) params[spec.name] = spec.default;
  return {
    preset,
    params,
    n: preset.n,
    seed: 1,
    methods: [...preset.designs],
    estimators: [...preset.estimators],
    reps: 50,
  };
}

function scenarioBody(state: ExplorerState): ScenarioBody {
  // key order is fixed so identical states serialize identically
  const params: Record<string, number> = {};
  for (const name of Object.keys(state.params).sort()) {
    const value = state.params[name];
    if (value !== undefined) params[name] = value;
  }
  return { series: state.preset.series, params, n: state.n, seed: state.seed };
}

export function allocateRequest(state: ExplorerState): AllocateBody {
  const clamped = clampState(state);
  return {
    methods: [...clamped.methods],
    scenario: scenarioBody(clamped),
    n: clamped.n,
  };
}

export function simulateRequest(state: ExplorerState): SimulateBody {
  const clamped = clampState(state);
  return {
    spec: scenarioBody(clamped),
    designs: [...clamped.methods],
    estimators: [...clamped.estimators],
    reps: clamped.reps,
    seed: clamped.seed,
  };
}
