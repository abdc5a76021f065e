import { readFileSync } from 'node:fs'
import { join } from 'node:path'

import {
    EmokitCliError,
    readJson,
    readJsonl,
    runCli,
    withTempDir,
    writeJson,
    writeJsonl,
} from './core.js'

export { EmokitCliError, cliCommand } from './core.js'

export type Taxonomy = {
    name: string
    classes: string[]
}

export type RaterVote = {
    raterId: string
    emotions: string[]
}

export type AggregateOptions = {
    /** Mix-with-uniform smoothing epsilon; 0 (the default) returns raw vote shares. */
    smoothing?: number
}

/** The shipped 8-class primary taxonomy; entry order is significant. */
export const POD_PRIMARY: Taxonomy = {
    name: 'pod-primary',
    classes: ['angry', 'sad', 'disgust', 'contempt', 'fear', 'neutral', 'surprise', 'happy'],
}

/** Load a taxonomy config file ({"name", "classes"}). */
export function loadTaxonomy(path: string): Taxonomy {
    const parsed = JSON.parse(readFileSync(path, 'utf-8')) as Partial<Taxonomy>
    if (typeof parsed.name !== 'string' || !Array.isArray(parsed.classes)) {
        throw new Error(`${path}: taxonomy config must be {"name", "classes"}`)
    }
    return { name: parsed.name, classes: parsed.classes.map(String) }
}

function annotationRow(id: string, votes: RaterVote[]) {
    return {
        utterance_id: id,
        dataset: 'bindings',
        speaker_id: 'spk0',
        dyad_id: null,
        votes: votes.map((v) => ({
            rater_id: v.raterId,
            emotions: v.emotions,
            typed_description: null,
        })),
    }
}

/**
 * All-inclusive aggregation for many utterances in one CLI round trip.
 * Returns one distribution (taxonomy class order) per vote set.
 */
export async function aggregateArMany(
    voteSets: RaterVote[][],
    taxonomy: Taxonomy = POD_PRIMARY,
    options: AggregateOptions = {},
): Promise<number[][]> {
    if (voteSets.length === 0) return []
    return withTempDir(async (dir) => {
        const taxonomyPath = join(dir, 'taxonomy.json')
        const inputPath = join(dir, 'annotations.jsonl')
        const outputPath = join(dir, 'labels.jsonl')
        await writeJson(taxonomyPath, taxonomy)
        await writeJsonl(
            inputPath,
            voteSets.map((votes, i) => annotationRow(`q${i.toString().padStart(6, '0')}`, votes)),
        )
        await runCli([
            'aggregate',
            '--rule', 'ar',
            '--taxonomy', taxonomyPath,
            '--smoothing', String(options.smoothing ?? 0),
            '--input', inputPath,
            '--output', outputPath,
        ])
        const rows = (await readJsonl(outputPath)) as Array<{
            utterance_id: string
            distribution: number[]
        }>
        const byId = new Map(rows.map((r) => [r.utterance_id, r.distribution]))
        return voteSets.map((_, i) => {
            const dist = byId.get(`q${i.toString().padStart(6, '0')}`)
            if (!dist) throw new Error(`aggregate output is missing vote set ${i}`)
            return dist
        })
    })
}

/** All-inclusive aggregation of one utterance's votes into a distribution. */
export async function aggregateAr(
    votes: RaterVote[],
    taxonomy: Taxonomy = POD_PRIMARY,
    options: AggregateOptions = {},
): Promise<number[]> {
    const [distribution] = await aggregateArMany([votes], taxonomy, options)
    return distribution
}

/**
 * Macro-F1 of prediction vectors against gold distributions under the
 * 1/C-threshold protocol.  Rows align by index; vectors follow taxonomy order.
 */
export async function macroF1(
    preds: number[][],
    golds: number[][],
    taxonomy: Taxonomy = POD_PRIMARY,
): Promise<number> {
    if (preds.length !== golds.length) {
        throw new Error(`preds (${preds.length}) and golds (${golds.length}) differ in length`)
    }
    return withTempDir(async (dir) => {
        const taxonomyPath = join(dir, 'taxonomy.json')
        const predPath = join(dir, 'preds.jsonl')
        const goldPath = join(dir, 'golds.jsonl')
        const reportPath = join(dir, 'report.json')
        await writeJson(taxonomyPath, taxonomy)
        const id = (i: number) => `e${i.toString().padStart(6, '0')}`
        await writeJsonl(predPath, preds.map((dist, i) => ({
            utterance_id: id(i),
            distribution: dist,
        })))
        await writeJsonl(goldPath, golds.map((dist, i) => ({
            utterance_id: id(i),
            kind: 'distribution',
            class: null,
            distribution: dist,
            reason: null,
            smoothed: false,
        })))
        await runCli([
            'evaluate',
            '--pred', predPath,
            '--gold', goldPath,
            '--taxonomy', taxonomyPath,
            '--report', reportPath,
        ])
        const report = (await readJson(reportPath)) as { macro_f1: number }
        return report.macro_f1
    })
}

/** Class-balanced loss factors (1 - beta) / (1 - beta^n) per class count. */
export async function cbceFactors(counts: number[], beta: number): Promise<number[]> {
    if (counts.length === 0) return []
    const stdout = await runCli([
        'cbce-factors',
        '--beta', String(beta),
        '--counts', counts.join(','),
    ])
    return JSON.parse(stdout) as number[]
}
