/**
 * Toy attention-recommender checkpoints: schema, seeded generation, loading.
 */

import { readFileSync, writeFileSync } from 'node:fs';
import { z } from 'zod';

const matrix = z.array(z.array(z.number()));

export const headSchema = z.object({
  wq: matrix,
  wk: matrix,
  wv: matrix,
});

export const checkpointSchema = z.object({
  schema: z.literal('tiny-ck-v1'),
  dim: z.number().int().positive(),
  vocab: z.array(z.string()).min(2),
  embeddings: matrix,
  mask_embedding: z.array(z.number()),
  positional: matrix,
  layers: z.array(z.object({ heads: z.array(headSchema).min(1) })).min(1),
});

export type Checkpoint = z.infer<typeof checkpointSchema>;

/** Deterministic 32-bit PRNG; good enough for toy weights. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussian(rand: () => number): () => number {
  // Box-Muller; one draw per call keeps the sequence deterministic
  return () => {
    const u = Math.max(rand(), 1e-12);
    const v = rand();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  };
}

export interface CheckpointOptions {
  vocab: string[];
  dim?: number;
  heads?: number;
  layers?: number;
  maxLen?: number;
  seed?: number;
}

export function makeCheckpoint(opts: CheckpointOptions): Checkpoint {
  const dim = opts.dim ?? 8;
  const heads = opts.heads ?? 1;
  const layers = opts.layers ?? 2;
  const maxLen = opts.maxLen ?? 32;
  const next = gaussian(mulberry32(opts.seed ?? 0));
  const scale = 1 / Math.sqrt(dim);
  const vec = (n: number, s: number) => Array.from({ length: n }, () => next() * s);
  const mat = (rows: number, cols: number, s: number) =>
    Array.from({ length: rows }, () => vec(cols, s));
  return {
    schema: 'tiny-ck-v1',
    dim,
    vocab: [...opts.vocab],
    embeddings: mat(opts.vocab.length, dim, scale),
    mask_embedding: vec(dim, scale),
    positional: mat(maxLen, dim, scale / 2),
    layers: Array.from({ length: layers }, () => ({
      heads: Array.from({ length: heads }, () => ({
        wq: mat(dim, dim, scale),
        wk: mat(dim, dim, scale),
        wv: mat(dim, dim, scale),
      })),
    })),
  };
}

export function loadCheckpoint(path: string): Checkpoint {
  const parsed = checkpointSchema.safeParse(JSON.parse(readFileSync(path, 'utf-8')));
  if (!parsed.success) {
    throw new Error(`invalid checkpoint ${path}: ${parsed.error.issues[0]?.message}`);
  }
  return parsed.data;
}

export function saveCheckpoint(path: string, ck: Checkpoint): void {
  writeFileSync(path, JSON.stringify(ck) + '\n', 'utf-8');
}
