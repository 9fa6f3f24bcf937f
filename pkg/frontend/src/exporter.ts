/**
 * Export named tensors from a checkpoint into NTF files plus a manifest, and
 * verify a manifest against the files on disk. Checkpoint channel surgery
 * itself stays in the main toolkit so the audit trail lives in one place.
 */

import * as crypto from 'node:crypto';
import * as fs from 'node:fs';
import * as path from 'node:path';

import { encodeNtf, decodeNtf } from './ntf.js';
import { parseSafetensors, RawTensor } from './safetensors.js';
import { parseTfjsModel, hwioToOihw } from './tfjs.js';

export const TOOL_VERSION = '0.1.0';

export interface ManifestTensor {
  name: string;
  shape: number[];
  dtype: 'f32';
  path: string;
  sha256: string;
}

export interface ExportManifest {
  source: string;
  format: 'safetensors' | 'tfjs';
  tool_version: string;
  tensors: ManifestTensor[];
}

export function loadCheckpoint(checkpointPath: string): {
  format: 'safetensors' | 'tfjs';
  tensors: Map<string, RawTensor>;
} {
  if (!fs.existsSync(checkpointPath)) {
    throw new Error(`checkpoint not found: ${checkpointPath}`);
  }
  if (checkpointPath.endsWith('.json')) {
    return { format: 'tfjs', tensors: parseTfjsModel(checkpointPath) };
  }
  return { format: 'safetensors', tensors: parseSafetensors(fs.readFileSync(checkpointPath)) };
}

function globToRegex(glob: string): RegExp {
  const escaped = glob.replace(/[.+^${}()|[\]\\]/g, '\\$&').replace(/\*/g, '.*').replace(/\?/g, '.');
  return new RegExp(`^${escaped}$`);
}

export function resolveNames(available: string[], patterns: string[]): string[] {
  const chosen: string[] = [];
  for (const pattern of patterns) {
    const rx = globToRegex(pattern);
    const hits = available.filter((n) => rx.test(n));
    if (hits.length === 0) {
      throw new Error(
        `no tensor matches ${JSON.stringify(pattern)}; available: ${available.sort().join(', ')}`,
      );
    }
    for (const h of hits) if (!chosen.includes(h)) chosen.push(h);
  }
  return chosen;
}

function sanitize(name: string): string {
  return name.replace(/[^A-Za-z0-9._-]/g, '_');
}

export function exportTensors(
  checkpointPath: string,
  patterns: string[],
  outDir: string,
): ExportManifest {
  const { format, tensors } = loadCheckpoint(checkpointPath);
  const names = resolveNames([...tensors.keys()], patterns);
  fs.mkdirSync(outDir, { recursive: true });
  const entries: ManifestTensor[] = [];
  for (const name of names) {
    const raw = tensors.get(name)!;
    let shape = raw.shape;
    let data = raw.data;
    if (format === 'tfjs' && shape.length === 4) {
      ({ shape, data } = hwioToOihw(shape, data));
    }
    // conv kernels leave here as [out, in, kH, kW]; other ranks pass through
    const blob = encodeNtf({ dtype: 'f32', shape, data });
    const fileName = `${sanitize(name)}.ntf`;
    fs.writeFileSync(path.join(outDir, fileName), blob);
    entries.push({
      name,
      shape,
      dtype: 'f32',
      path: fileName,
      sha256: crypto.createHash('sha256').update(blob).digest('hex'),
    });
  }
  const manifest: ExportManifest = {
    source: path.resolve(checkpointPath),
    format,
    tool_version: TOOL_VERSION,
    tensors: entries,
  };
  fs.writeFileSync(path.join(outDir, 'manifest.json'), JSON.stringify(manifest, null, 2) + '\n');
  return manifest;
}

export interface VerifyIssue {
  name: string;
  problem: string;
}

export function verifyManifest(manifestPath: string): VerifyIssue[] {
  const dir = path.dirname(manifestPath);
  const manifest: ExportManifest = JSON.parse(fs.readFileSync(manifestPath, 'utf-8'));
  const issues: VerifyIssue[] = [];
  for (const entry of manifest.tensors) {
    const file = path.join(dir, entry.path);
    if (!fs.existsSync(file)) {
      issues.push({ name: entry.name, problem: `missing file ${entry.path}` });
      continue;
    }
    const blob = fs.readFileSync(file);
    const digest = crypto.createHash('sha256').update(blob).digest('hex');
    if (digest !== entry.sha256) {
      issues.push({ name: entry.name, problem: 'checksum mismatch' });
      continue;
    }
    try {
      const tensor = decodeNtf(blob);
      if (JSON.stringify(tensor.shape) !== JSON.stringify(entry.shape)) {
        issues.push({
          name: entry.name,
          problem: `shape ${JSON.stringify(tensor.shape)} != manifest ${JSON.stringify(entry.shape)}`,
        });
      }
    } catch (err) {
      issues.push({ name: entry.name, problem: `unparseable NTF: ${err}` });
    }
  }
  return issues;
}
