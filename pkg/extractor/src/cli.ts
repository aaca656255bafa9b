#!/usr/bin/env node
import { loadEncoder } from './encoder.js'
import { loadClassNames } from './dataset.js'
import { extractImages, extractClassPrototypes } from './extract.js'

const USAGE = `usage: emb1-extract --images <dir> --classes <file> --ckpt <id> --out <stem>
                    [--template <text>] [--prototypes-out <stem>]

Embeds a class-foldered image tree into an EMB1 cache (<stem>.emb plus
<stem>.meta.json). With --prototypes-out, also embeds one text prompt per
class into a second cache usable as classifier prototypes.

  --images          image root, one subfolder per class
  --classes         text file with one class name per line (defines label order)
  --ckpt            encoder checkpoint id, e.g. mock:64 or mock:64:7
  --out             output stem for the image cache
  --template        prompt prefix for prototypes (default: 'a photo of a')
  --prototypes-out  output stem for the class-prompt cache`

type Args = {
  images: string
  classes: string
  ckpt: string
  out: string
  template: string
  prototypesOut?: string
}

function parseArgs(argv: string[]): Args {
  let flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    let key = argv[i]
    let value = argv[i + 1]
    if (!key.startsWith('--') || value == undefined) {
      throw new Error(`bad argument '${key}'`)
    }
    if (flags.has(key)) {
      throw new Error(`duplicate flag ${key}`)
    }
    flags.set(key, value)
  }
  let known = ['--images', '--classes', '--ckpt', '--out', '--template', '--prototypes-out']
  for (let key of flags.keys()) {
    if (!known.includes(key)) {
      throw new Error(`unknown flag ${key}`)
    }
  }
  for (let key of ['--images', '--classes', '--ckpt', '--out']) {
    if (!flags.has(key)) {
      throw new Error(`missing required flag ${key}`)
    }
  }
  return {
    images: flags.get('--images')!,
    classes: flags.get('--classes')!,
    ckpt: flags.get('--ckpt')!,
    out: flags.get('--out')!,
    template: flags.get('--template') ?? 'a photo of a',
    prototypesOut: flags.get('--prototypes-out'),
  }
}

function stemToPath(stem: string): string {
  // accept both a bare stem and an explicit .emb path
  return stem.endsWith('.emb') ? stem : stem + '.emb'
}

async function main() {
  let argv = process.argv.slice(2)
  if (argv.length == 0 || argv[0] == '--help' || argv[0] == '-h') {
    console.log(USAGE)
    return
  }
  let args = parseArgs(argv)
  let encoder = loadEncoder(args.ckpt)
  let classNames = loadClassNames(args.classes)
  let images = await extractImages({
    imageRoot: args.images,
    classNames,
    encoder,
    out: stemToPath(args.out),
  })
  console.log(`wrote ${images.out}: ${images.rows} rows, dim ${images.dim}`)
  if (args.prototypesOut != undefined) {
    let protos = await extractClassPrototypes({
      classNames,
      template: args.template,
      encoder,
      out: stemToPath(args.prototypesOut),
    })
    console.log(`wrote ${protos.out}: ${protos.rows} rows, dim ${protos.dim}`)
  }
}

main().catch(e => {
  console.error(String(e instanceof Error ? e.message : e))
  console.error(USAGE)
  process.exit(1)
})
