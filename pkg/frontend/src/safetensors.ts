/**
 * Minimal safetensors reader: 8-byte LE header length, JSON header mapping
 * tensor names to { dtype, shape, data_offsets }, then the raw data block.
 * Conv kernels from this ecosystem are already [out, in, kH, kW].
 */

export interface RawTensor {
  name: string;
  dtype: 'F32' | 'F64';
  shape: number[];
  data: Float64Array;
}

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export function parseSafetensors(buf: Buffer): Map<string, RawTensor> {
  if (buf.length < 8) throw new Error('not a safetensors file (too short)');
  const headerSize = Number(buf.readBigUInt64LE(0));
  if (headerSize <= 0 || 8 + headerSize > buf.length) {
    throw new Error('not a safetensors file (bad header size)');
  }
  let header: Record<string, HeaderEntry>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerSize).toString('utf-8'));
  } catch (err) {
    throw new Error(`safetensors header is not valid JSON: ${err}`);
  }
  const dataStart = 8 + headerSize;
  const out = new Map<string, RawTensor>();
  for (const [name, entry] of Object.entries(header)) {
    if (name === '__metadata__') continue;
    const { dtype, shape, data_offsets } = entry;
    if (dtype !== 'F32' && dtype !== 'F64') {
      throw new Error(`tensor ${name}: unsupported safetensors dtype ${dtype}`);
    }
    const [begin, end] = data_offsets;
    const itemSize = dtype === 'F32' ? 4 : 8;
    const count = shape.reduce((a, b) => a * b, 1);
    if (end - begin !== count * itemSize) {
      throw new Error(`tensor ${name}: data span does not match shape`);
    }
    const data = new Float64Array(count);
    for (let i = 0; i < count; i++) {
      data[i] =
        dtype === 'F32'
          ? buf.readFloatLE(dataStart + begin + 4 * i)
          : buf.readDoubleLE(dataStart + begin + 8 * i);
    }
    out.set(name, { name, dtype, shape, data });
  }
  return out;
}

/** Build a safetensors byte blob (used by tests to fabricate real checkpoints). */
export function buildSafetensors(tensors: { name: string; shape: number[]; values: number[] }[]): Buffer {
  const header: Record<string, HeaderEntry> = {};
  const blocks: Buffer[] = [];
  let offset = 0;
  for (const t of tensors) {
    const count = t.shape.reduce((a, b) => a * b, 1);
    if (count !== t.values.length) throw new Error(`${t.name}: shape/value mismatch`);
    const block = Buffer.alloc(4 * count);
    t.values.forEach((v, i) => block.writeFloatLE(Math.fround(v), 4 * i));
    header[t.name] = { dtype: 'F32', shape: t.shape, data_offsets: [offset, offset + block.length] };
    blocks.push(block);
    offset += block.length;
  }
  const headerJson = Buffer.from(JSON.stringify(header), 'utf-8');
  const sizeBuf = Buffer.alloc(8);
  sizeBuf.writeBigUInt64LE(BigInt(headerJson.length));
  return Buffer.concat([sizeBuf, headerJson, ...blocks]);
}
