/**
 * Stdio model protocol: newline-delimited JSON, one request in flight.
 *
 * Requests: {"op": "recommend", "items": [...], "k": n}
 *           {"op": "attention", "items": [...]}
 * Responses carry "top_k" or "matrix"; failures become {"error": "..."} and
 * the loop keeps serving.  End of input shuts down cleanly.
 */

import { createInterface } from 'node:readline';
import type { Readable, Writable } from 'node:stream';
import { z } from 'zod';
import type { TinyRecommender } from './model.js';

const requestSchema = z.discriminatedUnion('op', [
  z.object({
    op: z.literal('recommend'),
    items: z.array(z.string()).min(1),
    k: z.number().int().positive().default(5),
  }),
  z.object({
    op: z.literal('attention'),
    items: z.array(z.string()).min(1),
  }),
]);

export function handleRequest(model: TinyRecommender, line: string): string {
  let response: unknown;
  try {
    const parsed = requestSchema.safeParse(JSON.parse(line));
    if (!parsed.success) {
      response = { error: `bad request: ${parsed.error.issues[0]?.message}` };
    } else if (parsed.data.op === 'recommend') {
      response = { top_k: model.recommend(parsed.data.items, parsed.data.k) };
    } else {
      response = { matrix: model.attention(parsed.data.items) };
    }
  } catch (e) {
    response = { error: e instanceof Error ? `${e.constructor.name}: ${e.message}` : String(e) };
  }
  return JSON.stringify(response);
}

export async function serve(
  model: TinyRecommender,
  input: Readable,
  output: Writable,
): Promise<void> {
  const rl = createInterface({ input, crlfDelay: Infinity });
  for await (const line of rl) {
    if (!line.trim()) continue;
    output.write(handleRequest(model, line) + '\n');
  }
}
