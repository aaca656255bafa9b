import { readFileSync } from 'fs'
import { writeCache } from './emb1.js'
import { Encoder } from './encoder.js'
import { listImagesByClass } from './dataset.js'

export type ExtractSummary = {
  rows: number
  dim: number
  out: string
}

/**
 * Embed every image under the class-folder layout and write one cache.
 * Features are stored raw; normalization is the consumer's choice.
 */
export async function extractImages(options: {
  imageRoot: string
  classNames: string[]
  encoder: Encoder
  /** output path ending in .emb */
  out: string
}): Promise<ExtractSummary> {
  let { imageRoot, classNames, encoder, out } = options
  let entries = listImagesByClass({ imageRoot, classNames })
  let n = entries.length
  let d = encoder.dim
  let features = new Float32Array(n * d)
  let labels = new Int32Array(n)
  for (let i = 0; i < n; i++) {
    let emb = await encoder.embedImage(readFileSync(entries[i].file))
    if (emb.length != d) {
      throw new Error(`encoder returned ${emb.length} dims for ${entries[i].file}, expected ${d}`)
    }
    features.set(emb, i * d)
    labels[i] = entries[i].label
  }
  writeCache(out, {
    features,
    n,
    d,
    labels,
    classNames,
    source: `extract:images ckpt=${encoder.id} root=${imageRoot}`,
    normalized: false,
  })
  return { rows: n, dim: d, out }
}

/**
 * Embed one prompt per class and write the result as a prototype cache:
 * row i is class i, labels are simply 0..C-1.
 */
export async function extractClassPrototypes(options: {
  classNames: string[]
  /** prepended to each class name, e.g. 'a photo of a' */
  template: string
  encoder: Encoder
  /** output path ending in .emb */
  out: string
}): Promise<ExtractSummary> {
  let { classNames, template, encoder, out } = options
  let n = classNames.length
  let d = encoder.dim
  let features = new Float32Array(n * d)
  let labels = new Int32Array(n)
  for (let i = 0; i < n; i++) {
    let prompt = template.length > 0 ? `${template} ${classNames[i]}` : classNames[i]
    let emb = await encoder.embedText(prompt)
    if (emb.length != d) {
      throw new Error(`encoder returned ${emb.length} dims for prompt '${prompt}', expected ${d}`)
    }
    features.set(emb, i * d)
    labels[i] = i
  }
  writeCache(out, {
    features,
    n,
    d,
    labels,
    classNames,
    source: `extract:prototypes ckpt=${encoder.id} template='${template}'`,
    normalized: false,
  })
  return { rows: n, dim: d, out }
}
