import test from 'node:test'
import assert from 'node:assert/strict'
import { mkdtempSync, readFileSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { CacheData, readCache, sidecarPath, writeCache } from './emb1.js'

function tmpStem(name: string): string {
  return join(mkdtempSync(join(tmpdir(), 'emb1-')), name)
}

function sampleData(): CacheData {
  return {
    features: new Float32Array([0.5, -1.25, 2, 0, 3.5, -0.75]),
    n: 2,
    d: 3,
    labels: new Int32Array([0, 1]),
    classNames: ['cat', 'dog'],
    source: 'unit test',
    normalized: false,
  }
}

test('writer produces the exact documented byte layout', () => {
  let out = tmpStem('golden.emb')
  writeCache(out, sampleData())

  // hand-compose the expected file: header, floats, labels
  let expected = Buffer.alloc(16 + 4 * 6 + 4 * 2)
  expected.write('EMB1', 0, 'ascii')
  expected.writeUInt32LE(1, 4)
  expected.writeUInt32LE(2, 8)
  expected.writeUInt32LE(3, 12)
  let floats = [0.5, -1.25, 2, 0, 3.5, -0.75]
  floats.forEach((v, i) => expected.writeFloatLE(v, 16 + 4 * i))
  expected.writeInt32LE(0, 16 + 24)
  expected.writeInt32LE(1, 16 + 28)

  assert.equal(readFileSync(out).toString('hex'), expected.toString('hex'))
})

test('round trip preserves features, labels, and sidecar fields', () => {
  let out = tmpStem('roundtrip.emb')
  let data = sampleData()
  writeCache(out, data)
  let back = readCache(out)
  assert.equal(back.n, 2)
  assert.equal(back.d, 3)
  assert.deepEqual([...back.features], [...data.features])
  assert.deepEqual([...back.labels], [0, 1])
  assert.deepEqual(back.classNames, ['cat', 'dog'])
  assert.equal(back.source, 'unit test')
  assert.equal(back.normalized, false)
})

test('sidecar path replaces only the .emb suffix', () => {
  assert.equal(sidecarPath('/data/train.emb'), '/data/train.meta.json')
  assert.throws(() => sidecarPath('/data/train.bin'), /must end in .emb/)
})

test('writer rejects inconsistent payloads', () => {
  let out = tmpStem('bad.emb')
  let base = sampleData()
  assert.throws(() => writeCache(out, { ...base, labels: new Int32Array([0, 5]) }), /out of range/)
  assert.throws(() => writeCache(out, { ...base, labels: new Int32Array([0]) }), /labels length/)
  assert.throws(() => writeCache(out, { ...base, n: 3 }), /features length/)
  assert.throws(() => writeCache(out, { ...base, classNames: [] }), /empty/)
  let nan = sampleData()
  nan.features[4] = NaN
  assert.throws(() => writeCache(out, nan), /non-finite/)
})

test('reader rejects malformed files', () => {
  let out = tmpStem('mangled.emb')
  writeCache(out, sampleData())
  let good = readFileSync(out)

  let badMagic = Buffer.from(good)
  badMagic.write('NOPE', 0, 'ascii')
  writeFileSync(out, badMagic)
  assert.throws(() => readCache(out), /bad magic/)

  let badVersion = Buffer.from(good)
  badVersion.writeUInt32LE(9, 4)
  writeFileSync(out, badVersion)
  assert.throws(() => readCache(out), /unsupported version/)

  writeFileSync(out, good.subarray(0, good.length - 4))
  assert.throws(() => readCache(out), /payload size/)

  writeFileSync(out, good.subarray(0, 8))
  assert.throws(() => readCache(out), /truncated/)

  writeFileSync(out, good)
  writeFileSync(sidecarPath(out), JSON.stringify({ class_names: [] }))
  assert.throws(() => readCache(out), /class_names/)
})
