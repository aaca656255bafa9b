import { createHash } from 'crypto'

/**
 * A frozen dual encoder: images and text project into the same space.
 * Real checkpoints plug in by implementing this interface; the built-in
 * mock is deterministic so extraction runs are reproducible end to end.
 */
export type Encoder = {
  /** checkpoint id, recorded in cache provenance */
  id: string
  /** output dimension of both towers */
  dim: number
  embedImage(bytes: Buffer): Promise<Float32Array>
  embedText(text: string): Promise<Float32Array>
}

function hashToFloats(tag: string, payload: Buffer, dim: number): Float32Array {
  // counter-mode expansion of sha256(tag || payload) into dim floats in [-1, 1]
  let base = createHash('sha256').update(tag).update(payload).digest()
  let out = new Float32Array(dim)
  let block = Buffer.alloc(0)
  for (let i = 0; i < dim; i++) {
    if (i % 8 == 0) {
      block = createHash('sha256').update(base).update(String(i / 8)).digest()
    }
    let u = block.readUInt32LE((i % 8) * 4)
    out[i] = (u / 0xffffffff) * 2 - 1
  }
  return out
}

export function createMockEncoder(options: {
  dim: number
  /** default: 0 */
  seed?: number
}): Encoder {
  let dim = options.dim
  if (!Number.isInteger(dim) || dim < 1) {
    throw new Error(`mock encoder dim must be a positive integer, got ${dim}`)
  }
  let seed = options.seed ?? 0
  return {
    id: `mock:${dim}:${seed}`,
    dim,
    async embedImage(bytes) {
      return hashToFloats(`img:${seed}`, bytes, dim)
    },
    async embedText(text) {
      return hashToFloats(`txt:${seed}`, Buffer.from(text, 'utf8'), dim)
    },
  }
}

/**
 * Resolve a checkpoint id to an encoder.
 * Supported: 'mock:<dim>' or 'mock:<dim>:<seed>'.
 */
export function loadEncoder(ckpt: string): Encoder {
  let parts = ckpt.split(':')
  if (parts[0] == 'mock' && (parts.length == 2 || parts.length == 3)) {
    let dim = Number(parts[1])
    let seed = parts.length == 3 ? Number(parts[2]) : 0
    if (!Number.isInteger(seed)) {
      throw new Error(`mock encoder seed must be an integer, got ${parts[2]}`)
    }
    return createMockEncoder({ dim, seed })
  }
  throw new Error(`unknown checkpoint '${ckpt}' (supported: mock:<dim>[:<seed>])`)
}
