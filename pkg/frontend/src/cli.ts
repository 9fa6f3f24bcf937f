#!/usr/bin/env node
/**
 * ckpt-export: pull named weight tensors out of a pretrained checkpoint into
 * NTF files the main toolkit consumes.
 *
 *   ckpt-export export --checkpoint model.safetensors --names "conv1.weight" --out dir/
 *   ckpt-export verify --manifest dir/manifest.json
 */

import { exportTensors, verifyManifest } from './exporter.js';

function parseArgs(argv: string[]): { command: string; opts: Map<string, string[]> } {
  const [command, ...rest] = argv;
  const opts = new Map<string, string[]>();
  for (let i = 0; i < rest.length; i++) {
    const arg = rest[i];
    if (!arg.startsWith('--')) throw new Error(`unexpected argument ${arg}`);
    const key = arg.slice(2);
    const value = rest[++i];
    if (value === undefined) throw new Error(`--${key} needs a value`);
    opts.set(key, [...(opts.get(key) ?? []), value]);
  }
  return { command: command ?? '', opts };
}

function need(opts: Map<string, string[]>, key: string): string {
  const vals = opts.get(key);
  if (!vals || vals.length === 0) throw new Error(`missing required --${key}`);
  return vals[vals.length - 1];
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    console.error(`ckpt-export: ${(err as Error).message}`);
    return 2;
  }
  const { command, opts } = parsed;
  try {
    if (command === 'export') {
      const checkpoint = need(opts, 'checkpoint');
      const out = need(opts, 'out');
      const names = (opts.get('names') ?? []).flatMap((v) => v.split(','));
      if (names.length === 0) throw new Error('missing required --names');
      const manifest = exportTensors(checkpoint, names, out);
      for (const t of manifest.tensors) {
        console.log(`exported ${t.name} ${JSON.stringify(t.shape)} -> ${t.path}`);
      }
      return 0;
    }
    if (command === 'verify') {
      const issues = verifyManifest(need(opts, 'manifest'));
      if (issues.length === 0) {
        console.log('verify: all tensors match the manifest');
        return 0;
      }
      for (const issue of issues) console.error(`verify: ${issue.name}: ${issue.problem}`);
      return 1;
    }
    console.error(`ckpt-export: unknown command ${JSON.stringify(command)} (use export|verify)`);
    return 2;
  } catch (err) {
    console.error(`ckpt-export ${command}: ${(err as Error).message}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
