/**
 * TF-JS layers-model weight loader: model.json carries a weightsManifest of
 * groups, each listing shard file paths and the tensors packed into them
 * (float32, little-endian, concatenated in listing order). Conv kernels are
 * stored HWIO [kH, kW, in, out] and converted to OIHW downstream.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import { RawTensor } from './safetensors.js';

interface WeightSpec {
  name: string;
  shape: number[];
  dtype: string;
}

interface ManifestGroup {
  paths: string[];
  weights: WeightSpec[];
}

export function parseTfjsModel(modelJsonPath: string): Map<string, RawTensor> {
  const dir = path.dirname(modelJsonPath);
  let parsed: { weightsManifest?: ManifestGroup[] };
  try {
    parsed = JSON.parse(fs.readFileSync(modelJsonPath, 'utf-8'));
  } catch (err) {
    throw new Error(`cannot read TF-JS model.json at ${modelJsonPath}: ${err}`);
  }
  const groups = parsed.weightsManifest;
  if (!Array.isArray(groups)) {
    throw new Error(`${modelJsonPath}: missing weightsManifest`);
  }
  const out = new Map<string, RawTensor>();
  for (const group of groups) {
    const shard = Buffer.concat(group.paths.map((p) => fs.readFileSync(path.join(dir, p))));
    let offset = 0;
    for (const spec of group.weights) {
      if (spec.dtype !== 'float32') {
        throw new Error(`tensor ${spec.name}: unsupported TF-JS dtype ${spec.dtype}`);
      }
      const count = spec.shape.reduce((a, b) => a * b, 1);
      if (offset + 4 * count > shard.length) {
        throw new Error(`tensor ${spec.name}: shard data truncated`);
      }
      const data = new Float64Array(count);
      for (let i = 0; i < count; i++) data[i] = shard.readFloatLE(offset + 4 * i);
      offset += 4 * count;
      out.set(spec.name, { name: spec.name, dtype: 'F32', shape: spec.shape, data });
    }
  }
  return out;
}

/** HWIO [kH,kW,in,out] -> OIHW [out,in,kH,kW], row-major both sides. */
export function hwioToOihw(shape: number[], data: Float64Array): { shape: number[]; data: Float64Array } {
  if (shape.length !== 4) {
    throw new Error(`conv layout conversion needs a rank-4 tensor, got rank ${shape.length}`);
  }
  const [kh, kw, cin, cout] = shape;
  const out = new Float64Array(data.length);
  for (let o = 0; o < cout; o++) {
    for (let c = 0; c < cin; c++) {
      for (let y = 0; y < kh; y++) {
        for (let x = 0; x < kw; x++) {
          out[((o * cin + c) * kh + y) * kw + x] = data[((y * kw + x) * cin + c) * cout + o];
        }
      }
    }
  }
  return { shape: [cout, cin, kh, kw], data: out };
}
