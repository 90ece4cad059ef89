/**
 * StudioState: everything the user is steering, plus the validation and
 * clamping rules. Knob ranges come from the server (GET /assets) — never
 * hardcoded here.
 */

import type { JobRequestJson, KnobRanges, PlacementJson } from './api.js';

export interface StudioState {
  object: string;
  viewTag: string;
  background: string;
  placement: PlacementJson;
  prompt: string | null;
  tauF: number;
  tauQ: number;
  tauK: number;
  seed: number;
  guidance: number;
  styleWeight: number;
  contentWeight: number;
  numSteps: number;
}

export function defaultState(object: string, viewTag: string, background: string): StudioState {
  return {
    object,
    viewTag,
    background,
    placement: { x: 0, y: 0, scale: 1.0, rotation_deg: 0.0 },
    prompt: null,
    tauF: 0.2,
    tauQ: 0.5,
    tauK: 0.5,
    seed: 0,
    guidance: 5.0,
    styleWeight: 0.6,
    contentWeight: 0.8,
    numSteps: 50,
  };
}

export interface CanvasSize {
  width: number;
  height: number;
}

export interface ClampResult {
  placement: PlacementJson;
  clamped: boolean;
}

/**
 * Keep at least one pixel of the scaled render on the canvas. Returns the
 * adjusted placement and whether anything moved (the UI shows a warning
 * when it did).
 */
export function clampPlacement(
  placement: PlacementJson,
  renderSize: CanvasSize,
  canvas: CanvasSize,
): ClampResult {
  const w = Math.max(1, Math.round(renderSize.width * placement.scale));
  const h = Math.max(1, Math.round(renderSize.height * placement.scale));
  const x = Math.min(Math.max(placement.x, 1 - w), canvas.width - 1);
  const y = Math.min(Math.max(placement.y, 1 - h), canvas.height - 1);
  const clamped = x !== placement.x || y !== placement.y;
  return { placement: { ...placement, x, y }, clamped };
}

export interface KnobViolation {
  knob: string;
  value: number;
  range: [number, number];
}

const KNOB_FIELDS: [keyof StudioState, string][] = [
  ['tauF', 'tau_f'],
  ['tauQ', 'tau_q'],
  ['tauK', 'tau_k'],
  ['guidance', 'guidance'],
  ['styleWeight', 'style_weight'],
  ['contentWeight', 'content_weight'],
  ['seed', 'seed'],
  ['numSteps', 'num_steps'],
];

/**
 * Check every knob against the server-advertised ranges. Submission is
 * disabled while this returns violations.
 */
export function knobViolations(state: StudioState, ranges: KnobRanges): KnobViolation[] {
  const out: KnobViolation[] = [];
  for (const [field, knob] of KNOB_FIELDS) {
    const range = ranges[knob];
    if (!range) continue;
    const value = state[field] as number;
    if (value < range[0] || value > range[1]) {
      out.push({ knob, value, range });
    }
  }
  return out;
}

export function canSubmit(state: StudioState, ranges: KnobRanges): boolean {
  return knobViolations(state, ranges).length === 0;
}

/** Serialize the state into the exact request JSON the server receives. */
export function toRequestJson(state: StudioState): JobRequestJson {
  return {
    object: state.object,
    view_tag: state.viewTag,
    background: state.background,
    placement: { ...state.placement },
    prompt: state.prompt,
    tau_f: state.tauF,
    tau_q: state.tauQ,
    tau_k: state.tauK,
    seed: state.seed,
    guidance: state.guidance,
    style_weight: state.styleWeight,
    content_weight: state.contentWeight,
    num_steps: state.numSteps,
  };
}

/**
 * State round-trip invariant: the request echoed on the job detail view must
 * equal the submitted state field-for-field. Returns the mismatched keys
 * (empty when the echo is faithful).
 */
export function echoMismatches(state: StudioState, echo: JobRequestJson): string[] {
  const sent = toRequestJson(state);
  const out: string[] = [];
  for (const key of Object.keys(sent) as (keyof JobRequestJson)[]) {
    if (key === 'placement') {
      const a = sent.placement;
      const b = echo.placement;
      if (a.x !== b.x || a.y !== b.y || a.scale !== b.scale || a.rotation_deg !== b.rotation_deg) {
        out.push('placement');
      }
    } else if (sent[key] !== echo[key]) {
      out.push(key);
    }
  }
  return out;
}
