/**
 * NTF (Neutral Tensor Format) writer/reader.
 *
 * Layout, always little-endian regardless of host:
 *   bytes 0-3  magic "NTF1"
 *   byte  4    dtype code (0=f32, 1=f64, 2=u8)
 *   byte  5    ndim (u8)
 *   then       ndim x u64 LE extents
 *   then       row-major payload, LE
 */

export type NtfDtype = 'f32' | 'f64' | 'u8';

const MAGIC = Buffer.from('NTF1', 'ascii');
const CODE: Record<NtfDtype, number> = { f32: 0, f64: 1, u8: 2 };
const ITEM_SIZE: Record<NtfDtype, number> = { f32: 4, f64: 8, u8: 1 };

export interface NtfTensor {
  dtype: NtfDtype;
  shape: number[];
  /** row-major values; integral for u8 */
  data: Float64Array;
}

export function encodeNtf(tensor: NtfTensor): Buffer {
  const { dtype, shape, data } = tensor;
  if (shape.length === 0 || shape.length > 255) {
    throw new Error(`NTF shape must have 1..255 dims, got ${shape.length}`);
  }
  const count = shape.reduce((a, b) => a * b, 1);
  if (shape.some((e) => e < 1) || count !== data.length) {
    throw new Error(`shape ${JSON.stringify(shape)} does not match ${data.length} values`);
  }
  const header = Buffer.alloc(6 + 8 * shape.length);
  MAGIC.copy(header, 0);
  header.writeUInt8(CODE[dtype], 4);
  header.writeUInt8(shape.length, 5);
  shape.forEach((extent, i) => header.writeBigUInt64LE(BigInt(extent), 6 + 8 * i));
  const payload = Buffer.alloc(count * ITEM_SIZE[dtype]);
  for (let i = 0; i < count; i++) {
    if (dtype === 'f32') payload.writeFloatLE(Math.fround(data[i]), 4 * i);
    else if (dtype === 'f64') payload.writeDoubleLE(data[i], 8 * i);
    else payload.writeUInt8(data[i], i);
  }
  return Buffer.concat([header, payload]);
}

export function decodeNtf(buf: Buffer): NtfTensor {
  if (buf.length < 6 || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error('not an NTF file (bad magic)');
  }
  const code = buf.readUInt8(4);
  const dtype = (Object.keys(CODE) as NtfDtype[]).find((k) => CODE[k] === code);
  if (dtype === undefined) throw new Error(`unsupported NTF dtype code ${code}`);
  const ndim = buf.readUInt8(5);
  if (ndim === 0) throw new Error('NTF shape must be non-empty');
  if (buf.length < 6 + 8 * ndim) throw new Error('size mismatch (truncated shape header)');
  const shape: number[] = [];
  for (let i = 0; i < ndim; i++) shape.push(Number(buf.readBigUInt64LE(6 + 8 * i)));
  const count = shape.reduce((a, b) => a * b, 1);
  const offset = 6 + 8 * ndim;
  if (buf.length - offset !== count * ITEM_SIZE[dtype]) {
    throw new Error(
      `size mismatch (payload ${buf.length - offset} bytes, shape needs ${count * ITEM_SIZE[dtype]})`,
    );
  }
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    if (dtype === 'f32') data[i] = buf.readFloatLE(offset + 4 * i);
    else if (dtype === 'f64') data[i] = buf.readDoubleLE(offset + 8 * i);
    else data[i] = buf.readUInt8(offset + i);
  }
  return { dtype, shape, data };
}
