// Typed client for the study service HTTP API.
//
// The service never reveals which method is on which side: pair payloads
// carry only opaque /img URLs, and method labels appear solely in the
// results table.

export type Choice = "left" | "right";

export interface StudyInfo {
  study_id: string;
  total: number;
}

export interface PairView {
  pair_id: string;
  left_url: string;
  right_url: string;
  index: number;
  total: number;
}

export interface SessionDone {
  done: true;
  total: number;
}

export interface AnnotatorTally {
  votes_a: number;
  votes_b: number;
}

export interface TallyTable {
  method_a: string;
  method_b: string;
  per_annotator: Record<string, AnnotatorTally>;
  overall_percent_a: number | null;
  overall_percent_b: number | null;
  total_votes: number;
}

export type VoteOutcome = "recorded" | "duplicate";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class StudyApi {
  constructor(
    private readonly base = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  study(): Promise<StudyInfo> {
    return this.getJson<StudyInfo>("/api/study");
  }

  next(annotator: string): Promise<PairView | SessionDone> {
    return this.getJson<PairView | SessionDone>(
      `/api/next?annotator=${encodeURIComponent(annotator)}`,
    );
  }

  results(): Promise<TallyTable> {
    return this.getJson<TallyTable>("/api/results");
  }

  // 200 -> "recorded", 409 -> "duplicate" (the vote already exists server
  // side, so the caller should advance without double-counting).
  async vote(annotator: string, pairId: string, choice: Choice): Promise<VoteOutcome> {
    const response = await this.fetchFn(`${this.base}/api/vote`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator, pair_id: pairId, choice }),
    });
    if (response.ok) return "recorded";
    if (response.status === 409) return "duplicate";
    throw new ApiError(response.status, await errorText(response));
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.base + path);
    if (!response.ok) {
      throw new ApiError(response.status, await errorText(response));
    }
    return (await response.json()) as T;
  }
}

async function errorText(response: Response): Promise<string> {
  try {
    const payload = (await response.json()) as { error?: string };
    if (payload.error) return payload.error;
  } catch {
    // fall through to the status line
  }
  return `request failed with status ${response.status}`;
}

export function isDone(payload: PairView | SessionDone): payload is SessionDone {
  return (payload as SessionDone).done === true;
}
