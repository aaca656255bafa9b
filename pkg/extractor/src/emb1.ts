import { readFileSync, writeFileSync } from 'fs'

// EMB1 layout, all integers little-endian:
//   bytes 0..3   magic "EMB1"
//   bytes 4..7   u32 format version, currently 1
//   bytes 8..11  u32 n, rows
//   bytes 12..15 u32 d, feature dimension
//   then         n*d float32, row-major
//   then         n int32 labels
// A sidecar <stem>.meta.json carries class names and provenance.

export const MAGIC = 'EMB1'
export const FORMAT_VERSION = 1
const HEADER_SIZE = 16

export type CacheData = {
  /** row-major, length n*d */
  features: Float32Array
  n: number
  d: number
  labels: Int32Array
  classNames: string[]
  source: string
  normalized: boolean
}

export function sidecarPath(embPath: string): string {
  if (!embPath.endsWith('.emb')) {
    throw new Error(`cache path must end in .emb, got ${embPath}`)
  }
  return embPath.slice(0, -'.emb'.length) + '.meta.json'
}

export function writeCache(embPath: string, data: CacheData) {
  let { features, n, d, labels, classNames } = data
  if (n < 1 || d < 1) {
    throw new Error(`invalid dimensions n=${n} d=${d}`)
  }
  if (features.length != n * d) {
    throw new Error(`features length ${features.length} != n*d = ${n * d}`)
  }
  if (labels.length != n) {
    throw new Error(`labels length ${labels.length} != n = ${n}`)
  }
  if (classNames.length < 1) {
    throw new Error('class name list is empty')
  }
  for (let i = 0; i < n; i++) {
    if (labels[i] < 0 || labels[i] >= classNames.length) {
      throw new Error(`label ${labels[i]} at row ${i} out of range for ${classNames.length} classes`)
    }
  }
  for (let i = 0; i < features.length; i++) {
    if (!Number.isFinite(features[i])) {
      throw new Error(`non-finite feature at flat index ${i}`)
    }
  }

  let buf = Buffer.alloc(HEADER_SIZE + 4 * n * d + 4 * n)
  buf.write(MAGIC, 0, 'ascii')
  buf.writeUInt32LE(FORMAT_VERSION, 4)
  buf.writeUInt32LE(n, 8)
  buf.writeUInt32LE(d, 12)
  for (let i = 0; i < features.length; i++) {
    buf.writeFloatLE(features[i], HEADER_SIZE + 4 * i)
  }
  let labelOffset = HEADER_SIZE + 4 * n * d
  for (let i = 0; i < n; i++) {
    buf.writeInt32LE(labels[i], labelOffset + 4 * i)
  }
  writeFileSync(embPath, buf)

  let meta = {
    class_names: classNames,
    normalized: data.normalized,
    source: data.source,
  }
  writeFileSync(sidecarPath(embPath), JSON.stringify(meta, null, 2) + '\n')
}

export function readCache(embPath: string): CacheData {
  let buf = readFileSync(embPath)
  if (buf.length < HEADER_SIZE) {
    throw new Error(`${embPath}: truncated header (${buf.length} bytes)`)
  }
  let magic = buf.toString('ascii', 0, 4)
  if (magic != MAGIC) {
    throw new Error(`${embPath}: bad magic ${JSON.stringify(magic)}`)
  }
  let version = buf.readUInt32LE(4)
  if (version != FORMAT_VERSION) {
    throw new Error(`${embPath}: unsupported version ${version}`)
  }
  let n = buf.readUInt32LE(8)
  let d = buf.readUInt32LE(12)
  let expected = HEADER_SIZE + 4 * n * d + 4 * n
  if (buf.length != expected) {
    throw new Error(`${embPath}: payload size ${buf.length} does not match header (expected ${expected})`)
  }
  let features = new Float32Array(n * d)
  for (let i = 0; i < features.length; i++) {
    features[i] = buf.readFloatLE(HEADER_SIZE + 4 * i)
  }
  let labels = new Int32Array(n)
  let labelOffset = HEADER_SIZE + 4 * n * d
  for (let i = 0; i < n; i++) {
    labels[i] = buf.readInt32LE(labelOffset + 4 * i)
  }
  let meta = JSON.parse(readFileSync(sidecarPath(embPath), 'utf8'))
  if (!Array.isArray(meta.class_names) || meta.class_names.length < 1) {
    throw new Error(`${sidecarPath(embPath)}: class_names missing or empty`)
  }
  return {
    features,
    n,
    d,
    labels,
    classNames: meta.class_names.map(String),
    source: String(meta.source ?? ''),
    normalized: Boolean(meta.normalized),
  }
}
