import { existsSync, readFileSync, readdirSync, statSync } from 'fs'
import { extname, join } from 'path'

const IMAGE_EXTENSIONS = new Set(['.jpg', '.jpeg', '.png', '.bmp', '.gif', '.webp'])

/**
 * Read one class name per line. Line order defines label indices,
 * so the same file must be reused when adapting on the caches later.
 */
export function loadClassNames(file: string): string[] {
  let lines = readFileSync(file, 'utf8')
    .split('\n')
    .map(line => line.trim())
    .filter(line => line.length > 0)
  if (lines.length == 0) {
    throw new Error(`no class names in ${file}`)
  }
  let seen = new Set<string>()
  for (let name of lines) {
    if (seen.has(name)) {
      throw new Error(`duplicate class name '${name}' in ${file}`)
    }
    seen.add(name)
  }
  return lines
}

export type ImageEntry = {
  file: string
  label: number
}

/**
 * Walk an image root laid out as one subfolder per class.
 * Files inside each class folder are sorted so extraction order is stable.
 */
export function listImagesByClass(options: {
  imageRoot: string
  classNames: string[]
}): ImageEntry[] {
  let { imageRoot, classNames } = options
  if (!existsSync(imageRoot) || !statSync(imageRoot).isDirectory()) {
    throw new Error(`image root is not a directory: ${imageRoot}`)
  }
  let entries: ImageEntry[] = []
  for (let label = 0; label < classNames.length; label++) {
    let dir = join(imageRoot, classNames[label])
    if (!existsSync(dir) || !statSync(dir).isDirectory()) {
      throw new Error(`class folder not found: ${dir}`)
    }
    let files = readdirSync(dir)
      .filter(name => IMAGE_EXTENSIONS.has(extname(name).toLowerCase()))
      .sort()
    if (files.length == 0) {
      throw new Error(`no images for class '${classNames[label]}' in ${dir}`)
    }
    for (let name of files) {
      entries.push({ file: join(dir, name), label })
    }
  }
  return entries
}
