/**
 * Bridge command line: generate a toy checkpoint, export a trace, or serve
 * the stdio model protocol.
 */

import { readFileSync } from 'node:fs';
import process from 'node:process';
import { loadCheckpoint, makeCheckpoint, saveCheckpoint } from './checkpoint.js';
import { TinyRecommender, type BridgeConfig, type HeadAggregation } from './model.js';
import { serve } from './ipc.js';
import { exportTrace, readSessionsFile, writeTraceFile } from './trace.js';

interface Flags {
  [key: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected "--name value" pairs, got ${key}`);
    }
    flags[key.slice(2)] = argv[i + 1];
  }
  return flags;
}

function headAggregation(raw: string | undefined): HeadAggregation {
  if (raw === undefined || raw === 'mean') return 'mean';
  const idx = Number(raw);
  if (!Number.isInteger(idx) || idx < 0) throw new Error(`bad --heads value ${raw}`);
  return idx;
}

function modelFromFlags(flags: Flags): TinyRecommender {
  if (!flags.checkpoint) throw new Error('--checkpoint is required');
  const cfg: BridgeConfig = {
    layer: flags.layer === undefined || flags.layer === 'last' ? 'last' : Number(flags.layer),
    heads: headAggregation(flags.heads),
    vocabMap: flags['vocab-map']
      ? (JSON.parse(readFileSync(flags['vocab-map'], 'utf-8')) as Record<string, string>)
      : undefined,
  };
  return new TinyRecommender(loadCheckpoint(flags.checkpoint), cfg);
}

function cmdCheckpoint(flags: Flags): number {
  const size = Number(flags.vocab ?? 12);
  const vocab = Array.from({ length: size }, (_, i) => `item${String(i).padStart(2, '0')}`);
  const ck = makeCheckpoint({
    vocab,
    dim: Number(flags.dim ?? 8),
    heads: Number(flags.heads ?? 2),
    layers: Number(flags.layers ?? 2),
    seed: Number(flags.seed ?? 0),
  });
  saveCheckpoint(flags.out ?? 'checkpoint.json', ck);
  process.stdout.write(`wrote ${flags.out ?? 'checkpoint.json'} (${size} items)\n`);
  return 0;
}

function cmdExport(flags: Flags): number {
  const model = modelFromFlags(flags);
  if (!flags.sessions) throw new Error('--sessions file is required');
  const sessions = readSessionsFile(flags.sessions);
  const { lines, errors } = exportTrace(model, sessions, {
    topK: Number(flags['top-k'] ?? 5),
    variantsSize: Number(flags['variants-size'] ?? 2),
  });
  const out = flags.out ?? 'trace.jsonl';
  writeTraceFile(out, lines);
  process.stdout.write(`wrote ${out}: ${lines.length - 1} sessions, ${errors.length} errors\n`);
  for (const { id, error } of errors) {
    process.stderr.write(`session ${id}: ${error}\n`);
  }
  return errors.length > 0 ? 1 : 0;
}

async function cmdServe(flags: Flags): Promise<number> {
  const model = modelFromFlags(flags);
  await serve(model, process.stdin, process.stdout);
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    switch (command) {
      case 'checkpoint':
        return cmdCheckpoint(flags);
      case 'export':
        return cmdExport(flags);
      case 'serve':
        return await cmdServe(flags);
      default:
        process.stderr.write(
          'usage: cli.js <checkpoint|export|serve> [--flag value ...]\n' +
            '  checkpoint --vocab N --dim D --heads H --layers L --seed S --out ck.json\n' +
            '  export --checkpoint ck.json --sessions s.json [--top-k 5] [--variants-size 2]\n' +
            '         [--layer last|i] [--heads mean|i] [--vocab-map m.json] --out trace.jsonl\n' +
            '  serve  --checkpoint ck.json [--layer last|i] [--heads mean|i]\n',
        );
        return 2;
    }
  } catch (e) {
    process.stderr.write(`error: ${e instanceof Error ? e.message : String(e)}\n`);
    return 1;
  }
}

const entry = process.argv[1] ?? '';
if (entry.endsWith('cli.js') || entry.endsWith('cli.ts')) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
