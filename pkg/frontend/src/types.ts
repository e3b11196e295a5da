// Shapes exchanged with the twophase JSON API.

export interface ParamSpec {
  name: string;
  label: string;
  min: number;
  max: number;
  default: number;
  step?: number;
}

export interface Preset {
  id: string;
  series: string;
  label: string;
  N: number;
  n: number;
  params: ParamSpec[];
  designs: string[];
  estimators: string[];
}

export interface PresetsResponse {
  presets: Preset[];
}

export interface ScenarioBody {
  series: string;
  params: Record<string, number>;
  N?: number;
  n?: number;
  seed: number;
}

export interface AllocateBody {
  methods: string[];
  scenario: ScenarioBody;
  n?: number;
  min_per_stratum?: number;
}

export interface MethodAllocation {
  n_k: number[];
  total: number;
  sds: number[] | null;
  policy: Record<string, unknown>;
}

export interface AllocateResponse {
  strata: { sizes: number[]; levels: number[][] | null; inputs: string[] | null };
  allocations: Record<string, MethodAllocation>;
}

export interface SimulateBody {
  spec: ScenarioBody;
  designs: string[];
  estimators: string[];
  reps: number;
  seed: number;
}

export interface ReportRow {
  design: string;
  estimator: string;
  params: string;
  mse_star: number;
  se: number;
  reps: number;
  mc_se: number;
  failures: number;
}

export interface SimulateResponse {
  rows: ReportRow[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}
