/** Token-string utilities. Stripping reflections is deliberately NOT here:
 * the service owns that rule and the UI renders its `answer` verbatim. */

const TOKEN_PATTERN = /<reflect>|\$|[A-Z](?:[+-]\d+(?:\.\d+)?)?/g;

export const REFLECT = "<reflect>";

/** Split case-study notation into display tokens. */
export function splitTokens(text: string): string[] {
  const pieces = text.match(TOKEN_PATTERN) ?? [];
  if (pieces.join("") !== text) {
    throw new Error(`malformed token string: ${text}`);
  }
  return pieces;
}

/** Prefix for "insert <reflect> after the first k raw tokens". */
export function reflectPrefixAt(rawTokens: string[], k: number): string {
  if (k < 0 || k > rawTokens.length) {
    throw new Error(`position ${k} outside 0..${rawTokens.length}`);
  }
  const kept = rawTokens.slice(0, k).filter((t) => t !== "$");
  return kept.join("") + REFLECT;
}

export interface TokenDiff {
  index: number;
  left: string | null;
  right: string | null;
}

/** Token-level diff: positions where the two sequences disagree. */
export function diffTokens(left: string[], right: string[]): TokenDiff[] {
  const out: TokenDiff[] = [];
  const n = Math.max(left.length, right.length);
  for (let i = 0; i < n; i++) {
    const a = i < left.length ? left[i] : null;
    const b = i < right.length ? right[i] : null;
    if (a !== b) {
      out.push({ index: i, left: a, right: b });
    }
  }
  return out;
}
