/**
 * Forward pass for the toy attention recommender.
 *
 * Embedding + positional table, a stack of single- or multi-head
 * self-attention layers, masked-position scoring against the embedding
 * table.  Inference is plain arithmetic on a frozen checkpoint, so identical
 * inputs always produce identical outputs.
 */

import type { Checkpoint } from './checkpoint.js';

export type HeadAggregation = 'mean' | number;

export interface BridgeConfig {
  /** layer whose attention is exported; 'last' or an index */
  layer?: 'last' | number;
  heads?: HeadAggregation;
  topK?: number;
  /** optional external-id -> vocab-token remapping */
  vocabMap?: Record<string, string>;
}

export interface ForwardResult {
  /** per-layer, per-head attention: [layer][head][query][key] */
  attention: number[][][][];
  /** final hidden states, one row per token */
  hidden: number[][];
}

const MASK = '[MASK]';

function matmul(x: number[][], w: number[][]): number[][] {
  const rows = x.length;
  const inner = w.length;
  const cols = w[0].length;
  const out: number[][] = [];
  for (let i = 0; i < rows; i++) {
    const row = new Array<number>(cols).fill(0);
    for (let t = 0; t < inner; t++) {
      const xv = x[i][t];
      if (xv === 0) continue;
      const wrow = w[t];
      for (let j = 0; j < cols; j++) row[j] += xv * wrow[j];
    }
    out.push(row);
  }
  return out;
}

function softmaxRows(scores: number[][]): number[][] {
  return scores.map((row) => {
    const m = Math.max(...row);
    const exps = row.map((v) => Math.exp(v - m));
    const sum = exps.reduce((a, b) => a + b, 0);
    return exps.map((e) => e / sum);
  });
}

export class TinyRecommender {
  private readonly vocabIndex: Map<string, number>;

  constructor(private readonly ck: Checkpoint, private readonly cfg: BridgeConfig = {}) {
    this.vocabIndex = new Map(ck.vocab.map((v, i) => [v, i]));
    const layer = this.layerIndex();
    if (layer < 0 || layer >= ck.layers.length) {
      throw new Error(`layer selector resolves outside 0..${ck.layers.length - 1}`);
    }
  }

  layerIndex(): number {
    const sel = this.cfg.layer ?? 'last';
    return sel === 'last' ? this.ck.layers.length - 1 : sel;
  }

  private mapItem(item: string): string {
    return this.cfg.vocabMap?.[item] ?? item;
  }

  private embed(items: string[], withMask: boolean): number[][] {
    const rows: number[][] = [];
    for (const raw of items) {
      const item = this.mapItem(raw);
      const idx = this.vocabIndex.get(item);
      if (idx === undefined) throw new Error(`item ${JSON.stringify(raw)} not in vocabulary`);
      rows.push([...this.ck.embeddings[idx]]);
    }
    if (withMask) rows.push([...this.ck.mask_embedding]);
    if (rows.length > this.ck.positional.length) {
      throw new Error(`sequence length ${rows.length} exceeds positional table`);
    }
    return rows.map((row, pos) => row.map((v, d) => v + this.ck.positional[pos][d]));
  }

  forward(items: string[], withMask: boolean): ForwardResult {
    let x = this.embed(items, withMask);
    const perLayer: number[][][][] = [];
    for (const layer of this.ck.layers) {
      const headAttn: number[][][] = [];
      const headCtx: number[][][] = [];
      for (const head of layer.heads) {
        const q = matmul(x, head.wq);
        const k = matmul(x, head.wk);
        const scores = q.map((qi) =>
          k.map((kj) => qi.reduce((acc, qv, d) => acc + qv * kj[d], 0) / Math.sqrt(this.ck.dim)),
        );
        const attn = softmaxRows(scores);
        headAttn.push(attn);
        const v = matmul(x, head.wv);
        headCtx.push(attn.map((row) => row.reduce(
          (acc, w, j) => acc.map((a, d) => a + w * v[j][d]),
          new Array<number>(this.ck.dim).fill(0),
        )));
      }
      perLayer.push(headAttn);
      const nHeads = headCtx.length;
      x = x.map((_, i) =>
        Array.from({ length: this.ck.dim }, (_, d) =>
          headCtx.reduce((acc, ctx) => acc + ctx[i][d], 0) / nHeads,
        ),
      );
    }
    return { attention: perLayer, hidden: x };
  }

  /** Top-k (item, score) pairs at the masked next position, session excluded. */
  recommend(items: string[], k: number): Array<[string, number]> {
    const { hidden } = this.forward(items, true);
    const ctx = hidden[hidden.length - 1];
    const exclude = new Set(items.map((it) => this.mapItem(it)));
    const scored: Array<[string, number]> = [];
    for (let i = 0; i < this.ck.vocab.length; i++) {
      const token = this.ck.vocab[i];
      if (exclude.has(token)) continue;
      const score = this.ck.embeddings[i].reduce((acc, v, d) => acc + v * ctx[d], 0);
      scored.push([token, score]);
    }
    scored.sort((a, b) => (b[1] - a[1]) || (a[0] < b[0] ? -1 : 1));
    if (scored.length < k) {
      throw new Error(`vocabulary has only ${scored.length} candidates, need k=${k}`);
    }
    return scored.slice(0, k);
  }

  /**
   * Head-aggregated attention of the configured layer over the given tokens
   * (no mask appended), rows renormalized to sum exactly to 1.
   */
  attention(items: string[]): number[][] {
    const { attention } = this.forward(items, false);
    const layer = attention[this.layerIndex()];
    const agg = this.cfg.heads === undefined || this.cfg.heads === 'mean'
      ? layer[0].map((row, i) =>
          row.map((_, j) => layer.reduce((acc, h) => acc + h[i][j], 0) / layer.length),
        )
      : layer[this.cfg.heads];
    if (agg === undefined) throw new Error(`head index ${String(this.cfg.heads)} out of range`);
    return agg.map((row) => {
      const sum = row.reduce((a, b) => a + b, 0);
      return row.map((v) => v / sum);
    });
  }
}

export { MASK };
