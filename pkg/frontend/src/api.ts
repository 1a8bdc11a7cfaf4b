// Typed client for the challenge service HTTP API (v1).

export interface ChallengeResponse {
  session_id: string;
  image: string; // data URI or URL
  prompt: string[];
  display_scale: number;
  image_size: number;
  ttl_seconds: number;
}

export interface ClickPayload {
  x: number;
  y: number;
  t_ms: number;
}

export interface VerifyResponse {
  success: boolean;
  elapsed_seconds: number;
}

export interface ProfileStats {
  n_attempts: number;
  n_success: number;
  success_rate: number | null;
  mean_time_seconds: number | null;
}

export interface StatsResponse extends ProfileStats {
  profiles: Record<string, ProfileStats>;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && body.detail) detail = JSON.stringify(body.detail);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  challenge(profile: string): Promise<ChallengeResponse> {
    return this.request(`/api/v1/challenge?profile=${encodeURIComponent(profile)}`);
  }

  verify(sessionId: string, clicks: ClickPayload[]): Promise<VerifyResponse> {
    return this.request("/api/v1/verify", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, clicks }),
    });
  }

  stats(): Promise<StatsResponse> {
    return this.request("/api/v1/stats");
  }
}
