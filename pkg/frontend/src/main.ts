/**
 * DOM wiring for the placement studio. All generation happens server-side;
 * this file only renders state and relays user input.
 */

import { ApiClient } from './api.js';
import type { AssetsResponse, JobDetail, PreviewResponse } from './api.js';
import { ComparisonBoard, entryFromDetail } from './compare.js';
import { JobTracker } from './jobs.js';
import { PreviewLoop, diffOutsideMask, maskOutline } from './preview.js';
import type { Rgba } from './preview.js';
import { canSubmit, clampPlacement, defaultState, knobViolations, toRequestJson, echoMismatches } from './state.js';
import type { StudioState } from './state.js';

const api = new ApiClient('');
const tracker = new JobTracker(api);
const board = new ComparisonBoard();

let state: StudioState;
let assets: AssetsResponse;
let showOutline = true;
let showDiff = false;
let backgroundPixels: Rgba | null = null;
let renderSize = { width: 64, height: 64 };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function toast(message: string): void {
  const box = el<HTMLDivElement>('toast');
  box.textContent = message;
  box.classList.add('visible');
  setTimeout(() => box.classList.remove('visible'), 4000);
}

async function decodeB64(b64: string): Promise<Rgba> {
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = reject;
    img.src = `data:image/png;base64,${b64}`;
  });
  const canvas = document.createElement('canvas');
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext('2d')!;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, img.width, img.height);
  return { data: data.data, width: img.width, height: img.height };
}

async function drawPreview(result: PreviewResponse): Promise<void> {
  const canvas = el<HTMLCanvasElement>('canvas');
  canvas.width = result.width;
  canvas.height = result.height;
  const ctx = canvas.getContext('2d')!;
  const image = await decodeB64(result.image_b64);
  const mask = await decodeB64(result.mask_b64);
  const frame = new ImageData(new Uint8ClampedArray(image.data), image.width, image.height);

  if (showDiff && backgroundPixels) {
    // visual diff toggle: black out identical pixels, keep differing ones
    for (let i = 0; i < image.width * image.height; i++) {
      const o = i * 4;
      const same =
        image.data[o] === backgroundPixels.data[o] &&
        image.data[o + 1] === backgroundPixels.data[o + 1] &&
        image.data[o + 2] === backgroundPixels.data[o + 2];
      if (same) {
        frame.data[o] = frame.data[o + 1] = frame.data[o + 2] = 0;
      }
    }
    const outsideDiff = diffOutsideMask(image, backgroundPixels, mask);
    el<HTMLSpanElement>('diff-count').textContent = `pixels differing outside mask: ${outsideDiff}`;
  } else {
    el<HTMLSpanElement>('diff-count').textContent = '';
  }

  if (showOutline) {
    for (const idx of maskOutline(mask)) {
      const o = idx * 4;
      frame.data[o] = 255;
      frame.data[o + 1] = 64;
      frame.data[o + 2] = 64;
    }
  }
  ctx.putImageData(frame, 0, 0);
}

const previews = new PreviewLoop(api, (r) => void drawPreview(r), (msg) => toast(`preview: ${msg}`));

function schedulePreview(): void {
  previews.schedule({
    object: state.object,
    view_tag: state.viewTag,
    background: state.background,
    placement: state.placement,
  });
}

function refreshSubmitGate(): void {
  const violations = knobViolations(state, assets.knobs);
  const button = el<HTMLButtonElement>('submit');
  button.disabled = violations.length > 0;
  el<HTMLSpanElement>('knob-warning').textContent = violations
    .map((v) => `${v.knob}=${v.value} outside [${v.range[0]}, ${v.range[1]}]`)
    .join('; ');
}

function bindKnob(id: string, field: keyof StudioState, parse: (s: string) => number): void {
  const input = el<HTMLInputElement>(id);
  const knobName = id.replace('knob-', '');
  const range = assets.knobs[knobName];
  if (range) {
    input.min = String(range[0]);
    input.max = String(range[1]);
  }
  input.value = String(state[field]);
  input.addEventListener('input', () => {
    (state[field] as number) = parse(input.value);
    refreshSubmitGate();
  });
}

function populateSelectors(): void {
  const objectSel = el<HTMLSelectElement>('object');
  objectSel.innerHTML = assets.objects
    .map((o) => `<option value="${o.id}">${o.id}</option>`)
    .join('');
  const bgSel = el<HTMLSelectElement>('background');
  bgSel.innerHTML = assets.backgrounds.map((b) => `<option value="${b}">${b}</option>`).join('');

  const refreshViews = async () => {
    const views = await api.getRenders(objectSel.value);
    const viewSel = el<HTMLSelectElement>('view');
    viewSel.innerHTML = views.views.map((v) => `<option value="${v}">${v}</option>`).join('');
    state.object = objectSel.value;
    state.viewTag = viewSel.value;
    schedulePreview();
  };
  objectSel.addEventListener('change', () => void refreshViews());
  el<HTMLSelectElement>('view').addEventListener('change', (e) => {
    state.viewTag = (e.target as HTMLSelectElement).value;
    schedulePreview();
  });
  bgSel.addEventListener('change', () => {
    state.background = bgSel.value;
    backgroundPixels = null;
    schedulePreview();
  });
}

function bindCanvasDrag(): void {
  const canvas = el<HTMLCanvasElement>('canvas');
  let dragging = false;
  let grabOffset = { x: 0, y: 0 };

  canvas.addEventListener('mousedown', (e) => {
    dragging = true;
    grabOffset = { x: e.offsetX - state.placement.x, y: e.offsetY - state.placement.y };
  });
  canvas.addEventListener('mousemove', (e) => {
    if (!dragging) return;
    const raw = { ...state.placement, x: e.offsetX - grabOffset.x, y: e.offsetY - grabOffset.y };
    const { placement, clamped } = clampPlacement(raw, renderSize, {
      width: canvas.width,
      height: canvas.height,
    });
    state.placement = placement;
    if (clamped) toast('placement clamped to keep the object on the canvas');
    schedulePreview();
  });
  window.addEventListener('mouseup', () => (dragging = false));

  const scale = el<HTMLInputElement>('knob-scale');
  scale.addEventListener('input', () => {
    state.placement = { ...state.placement, scale: Number(scale.value) };
    schedulePreview();
  });
}

function renderBoard(): void {
  const view = board.current();
  for (const [slotId, entry] of [
    ['slot-a', view.slotA],
    ['slot-b', view.slotB],
  ] as const) {
    const node = el<HTMLDivElement>(slotId);
    if (!entry) {
      node.innerHTML = '<em>empty</em>';
      continue;
    }
    node.innerHTML = `
      <figure>
        <img src="/${entry.imagePath}" alt="${entry.label}" />
        <figcaption>${entry.label}<br/><code>${entry.imageSha256.slice(0, 12)}</code></figcaption>
      </figure>`;
  }
  el<HTMLDivElement>('history').textContent = view.history.map((h) => h.label).join(' · ');
}

async function submit(): Promise<void> {
  if (!canSubmit(state, assets.knobs)) return;
  const request = toRequestJson(state);
  el<HTMLSpanElement>('job-status').textContent = 'submitted…';
  try {
    const detail: JobDetail = await tracker.submitAndWait(request);
    const mismatches = echoMismatches(state, detail.request);
    if (mismatches.length > 0) {
      toast(`server echo mismatch: ${mismatches.join(', ')}`);
    }
    board.add(entryFromDetail(detail, `${state.viewTag} seed=${state.seed}`));
    renderBoard();
    el<HTMLSpanElement>('job-status').textContent = `done (${detail.job_id})`;
  } catch (err) {
    const detail = (err as { detail?: string; field?: string }).detail ?? String(err);
    const field = (err as { field?: string }).field;
    el<HTMLSpanElement>('job-status').textContent = '';
    if (field) {
      el<HTMLSpanElement>('knob-warning').textContent = `${field}: ${detail}`;
    } else {
      toast(detail);
    }
  }
}

async function init(): Promise<void> {
  assets = await api.getAssets();
  if (assets.objects.length === 0 || assets.backgrounds.length === 0) {
    toast('no assets registered on the server');
    return;
  }
  const first = assets.objects[0];
  state = defaultState(first.id, first.views[0] ?? '', assets.backgrounds[0]);

  populateSelectors();
  bindKnob('knob-tau_f', 'tauF', Number);
  bindKnob('knob-tau_q', 'tauQ', Number);
  bindKnob('knob-tau_k', 'tauK', Number);
  bindKnob('knob-style_weight', 'styleWeight', Number);
  bindKnob('knob-seed', 'seed', (s) => Math.round(Number(s)));
  bindCanvasDrag();
  refreshSubmitGate();

  el<HTMLButtonElement>('submit').addEventListener('click', () => void submit());
  el<HTMLInputElement>('toggle-outline').addEventListener('change', (e) => {
    showOutline = (e.target as HTMLInputElement).checked;
    if (previews.lastGood) void drawPreview(previews.lastGood);
  });
  el<HTMLInputElement>('toggle-diff').addEventListener('change', async (e) => {
    showDiff = (e.target as HTMLInputElement).checked;
    if (showDiff && !backgroundPixels) {
      const bgResp = await api.getBackground(state.background);
      backgroundPixels = await decodeB64(bgResp.image_b64);
    }
    if (previews.lastGood) void drawPreview(previews.lastGood);
  });

  schedulePreview();
}

void init();
