import { execFile } from 'node:child_process'
import { mkdtemp, rm, writeFile, readFile } from 'node:fs/promises'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { promisify } from 'node:util'

const execFileAsync = promisify(execFile)

/** Structured failure forwarded from the CLI's JSON stderr. */
export class EmokitCliError extends Error {
    readonly payload: Record<string, unknown>

    constructor(message: string, payload: Record<string, unknown>) {
        super(message)
        this.name = 'EmokitCliError'
        this.payload = payload
    }
}

/** Command used to reach the core; override with EMOKIT_BIN (space-separated). */
export function cliCommand(): string[] {
    const overridden = process.env.EMOKIT_BIN
    return overridden ? overridden.split(' ') : ['emokit']
}

export async function runCli(args: string[]): Promise<string> {
    const [cmd, ...prefix] = cliCommand()
    try {
        const { stdout } = await execFileAsync(cmd, [...prefix, ...args], {
            maxBuffer: 256 * 1024 * 1024,
        })
        return stdout
    } catch (err) {
        const stderr = (err as { stderr?: string }).stderr ?? ''
        let payload: Record<string, unknown> | undefined
        try {
            payload = JSON.parse(stderr.trim()) as Record<string, unknown>
        } catch {
            payload = undefined
        }
        if (payload && typeof payload.message === 'string') {
            throw new EmokitCliError(payload.message, payload)
        }
        throw err
    }
}

export async function withTempDir<T>(fn: (dir: string) => Promise<T>): Promise<T> {
    const dir = await mkdtemp(join(tmpdir(), 'emokit-bindings-'))
    try {
        return await fn(dir)
    } finally {
        await rm(dir, { recursive: true, force: true })
    }
}

export async function writeJson(path: string, value: unknown): Promise<void> {
    await writeFile(path, JSON.stringify(value) + '\n', 'utf-8')
}

export async function writeJsonl(path: string, rows: unknown[]): Promise<void> {
    await writeFile(path, rows.map((r) => JSON.stringify(r)).join('\n') + '\n', 'utf-8')
}

export async function readJson(path: string): Promise<unknown> {
    return JSON.parse(await readFile(path, 'utf-8'))
}

export async function readJsonl(path: string): Promise<unknown[]> {
    const text = await readFile(path, 'utf-8')
    return text
        .split('\n')
        .filter((line) => line.trim().length > 0)
        .map((line) => JSON.parse(line))
}
