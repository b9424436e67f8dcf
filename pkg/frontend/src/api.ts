/** Typed client for the sequencing service JSON API. */

export interface ServiceInfo {
  model_config: {
    d: number;
    layers: number;
    heads: number;
    ffn: number;
    max_decode_len: number;
    vocab_size: number;
  };
  vocabulary: string[];
  checkpoint_digest: string;
  mode: string | null;
  dataset_size: number;
}

export interface DatasetEntry {
  id: string;
  labeled: boolean;
  peaks: number;
  precursor_charge: number;
  precursor_mass: number;
}

export interface DatasetPsm {
  id: string;
  peaks: [number, number][];
  precursor_charge: number;
  precursor_mass: number;
  label?: string;
}

export interface MassDiagnostics {
  predicted: number;
  precursor: number;
  delta: number;
}

export interface SteerResponse {
  raw: string;
  raw_tokens: string[];
  log_probs: number[];
  answer: string;
  terminated: boolean;
  mass: MassDiagnostics;
  label?: string;
  matches?: boolean[];
}

export interface SteerRequest {
  psm_id?: string;
  spectrum?: {
    peaks: [number, number][];
    precursor_charge: number;
    precursor_mass: number;
  };
  prefix?: string;
  beam?: number;
  max_len?: number;
}

export interface ApiErrorBody {
  error: string;
  at: string | null;
}

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ApiErrorBody,
  ) {
    super(`${status}: ${body.error}`);
  }
}

export class SteerClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ServiceError(response.status, body as ApiErrorBody);
    }
    return body as T;
  }

  info(): Promise<ServiceInfo> {
    return this.request<ServiceInfo>("/info");
  }

  async dataset(): Promise<DatasetEntry[]> {
    const body = await this.request<{ psms: DatasetEntry[] }>("/dataset");
    return body.psms;
  }

  datasetPsm(id: string): Promise<DatasetPsm> {
    return this.request<DatasetPsm>(`/dataset/${encodeURIComponent(id)}`);
  }

  predict(request: SteerRequest): Promise<SteerResponse> {
    return this.post("/predict", request);
  }

  steer(request: SteerRequest): Promise<SteerResponse> {
    return this.post("/steer", request);
  }

  private post(path: string, request: SteerRequest): Promise<SteerResponse> {
    return this.request<SteerResponse>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
  }
}
