import test from 'node:test'
import assert from 'node:assert/strict'
import { mkdirSync, mkdtempSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { listImagesByClass, loadClassNames } from './dataset.js'

function tmp(): string {
  return mkdtempSync(join(tmpdir(), 'emb1-ds-'))
}

function makeTree(root: string, layout: Record<string, string[]>) {
  for (let [cls, files] of Object.entries(layout)) {
    mkdirSync(join(root, cls), { recursive: true })
    for (let name of files) {
      writeFileSync(join(root, cls, name), `bytes of ${cls}/${name}`)
    }
  }
}

test('class name file defines label order, ignoring blanks and padding', () => {
  let file = join(tmp(), 'classes.txt')
  writeFileSync(file, 'dog\n\n  cat  \nbird\n')
  assert.deepEqual(loadClassNames(file), ['dog', 'cat', 'bird'])
})

test('class name file rejects duplicates and emptiness', () => {
  let dir = tmp()
  let dupes = join(dir, 'dupes.txt')
  writeFileSync(dupes, 'dog\ncat\ndog\n')
  assert.throws(() => loadClassNames(dupes), /duplicate class name 'dog'/)
  let empty = join(dir, 'empty.txt')
  writeFileSync(empty, '\n  \n')
  assert.throws(() => loadClassNames(empty), /no class names/)
})

test('walks class folders in label order with sorted, filtered files', () => {
  let root = tmp()
  makeTree(root, {
    dog: ['b.jpg', 'a.png', 'notes.txt'],
    cat: ['z.JPG', 'y.webp'],
  })
  let entries = listImagesByClass({ imageRoot: root, classNames: ['dog', 'cat'] })
  assert.deepEqual(
    entries.map(e => e.file),
    [join(root, 'dog', 'a.png'), join(root, 'dog', 'b.jpg'), join(root, 'cat', 'y.webp'), join(root, 'cat', 'z.JPG')],
  )
  assert.deepEqual(entries.map(e => e.label), [0, 0, 1, 1])
})

test('missing or empty class folders are errors', () => {
  let root = tmp()
  makeTree(root, { dog: ['a.jpg'] })
  assert.throws(() => listImagesByClass({ imageRoot: root, classNames: ['dog', 'cat'] }), /class folder not found/)
  mkdirSync(join(root, 'cat'))
  writeFileSync(join(root, 'cat', 'readme.md'), 'no images here')
  assert.throws(() => listImagesByClass({ imageRoot: root, classNames: ['dog', 'cat'] }), /no images for class 'cat'/)
  assert.throws(() => listImagesByClass({ imageRoot: join(root, 'nowhere'), classNames: ['dog'] }), /not a directory/)
})
