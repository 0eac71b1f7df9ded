/** DOM wiring for the mask studio. All behavior worth testing lives in the
 * imported modules; this file binds them to the page.
 */
import { ApiError, ConflictError, TcigClient, ValidationError } from "./api";
import { LossTrace } from "./losschart";
import { CanvasMask, EmptyMaskError } from "./mask";
import { allowedActions, canTransition, isTerminal } from "./statuses";
import { bytesToBase64 } from "./indexmap";
import type {
  JobDoc,
  JobEvent,
  JobSpec,
  JobStatusValue,
  VocabEntry,
} from "./types";
import { parseVocab } from "./types";

function must<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

const RUN_COLORS = ["#e4572e", "#17bebb", "#ffc914", "#76b041", "#8338ec"];

interface StudioState {
  client: TcigClient | null;
  vocab: VocabEntry[];
  palette: Array<[number, number, number]>;
  mask: CanvasMask | null;
  lastUpload: Uint8Array | null;
  trace: LossTrace;
  jobId: string | null;
  status: JobStatusValue | null;
  subscription: AbortController | null;
}

const state: StudioState = {
  client: null,
  vocab: [],
  palette: [],
  mask: null,
  lastUpload: null,
  trace: new LossTrace(),
  jobId: null,
  status: null,
  subscription: null,
};

// ---------------------------------------------------------------- gating

function applyGates(): void {
  const acts = allowedActions(state.status);
  const formInputs = must<HTMLFormElement>("job-form").querySelectorAll(
    "input, button",
  );
  for (const el of formInputs) {
    (el as HTMLInputElement | HTMLButtonElement).disabled =
      !acts.has("submit");
  }
  for (const el of document.querySelectorAll("#draw-pane button, #draw-pane input")) {
    (el as HTMLInputElement | HTMLButtonElement).disabled = !acts.has("draw");
  }
  must<HTMLCanvasElement>("mask-canvas").style.pointerEvents = acts.has("draw")
    ? "auto"
    : "none";

  const selectable = acts.has("select");
  must<HTMLDivElement>("select-controls").hidden = !selectable;
  must<HTMLButtonElement>("refine-selected").disabled = !selectable;
  for (const box of document.querySelectorAll(".candidate-check")) {
    (box as HTMLInputElement).disabled = !selectable;
  }
  const overrideToggle = must<HTMLInputElement>("override-toggle");
  overrideToggle.disabled = !acts.has("override_strength");
  must<HTMLInputElement>("override-strength").disabled =
    !acts.has("override_strength") || !overrideToggle.checked;

  must<HTMLButtonElement>("new-job").hidden = !acts.has("new_job");
}

// ---------------------------------------------------------------- drawing

function renderMask(): void {
  const mask = state.mask;
  if (mask === null) {
    return;
  }
  const canvas = must<HTMLCanvasElement>("mask-canvas");
  canvas.width = mask.width;
  canvas.height = mask.height;
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  const image = ctx.createImageData(mask.width, mask.height);
  mask.renderInto(image.data, state.palette);
  ctx.putImageData(image, 0, 0);
}

function canvasCell(
  canvas: HTMLCanvasElement,
  ev: MouseEvent,
): [number, number] {
  const rect = canvas.getBoundingClientRect();
  const mask = state.mask;
  const w = mask === null ? canvas.width : mask.width;
  const h = mask === null ? canvas.height : mask.height;
  const x = Math.floor(((ev.clientX - rect.left) / rect.width) * w);
  const y = Math.floor(((ev.clientY - rect.top) / rect.height) * h);
  return [x, y];
}

function rebuildPalette(): void {
  const bar = must<HTMLDivElement>("palette");
  bar.innerHTML = "";
  for (const entry of state.vocab) {
    const btn = document.createElement("button");
    btn.type = "button";
    btn.className = "palette-chip";
    btn.dataset["classId"] = String(entry.id);
    const [r, g, b] = entry.color;
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = `rgb(${Math.round(r * 255)}, ${Math.round(
      g * 255,
    )}, ${Math.round(b * 255)})`;
    btn.append(swatch, document.createTextNode(entry.name));
    btn.addEventListener("click", () => {
      state.mask?.setBrush(entry.id, currentRadius());
      for (const other of bar.querySelectorAll(".palette-chip")) {
        other.classList.toggle("active", other === btn);
      }
    });
    bar.appendChild(btn);
  }
  const first = bar.querySelector(".palette-chip:nth-child(2), .palette-chip");
  (first as HTMLButtonElement | null)?.click();
}

function currentRadius(): number {
  return Number(must<HTMLInputElement>("brush-radius").value);
}

function resetMask(): void {
  const width = Number(must<HTMLInputElement>("mask-width").value);
  const height = Number(must<HTMLInputElement>("mask-height").value);
  state.mask = new CanvasMask(width, height, state.vocab.length);
  state.mask.setBrush(state.mask.brush.classId, currentRadius());
  renderMask();
}

// ---------------------------------------------------------------- errors

function clearViolations(): void {
  for (const span of document.querySelectorAll(".field-error[data-field]")) {
    span.textContent = "";
  }
  must<HTMLDivElement>("form-error").textContent = "";
  must<HTMLDivElement>("mask-error").textContent = "";
}

function renderViolations(err: ValidationError): void {
  clearViolations();
  const spans = [
    ...document.querySelectorAll(".field-error[data-field]"),
  ] as HTMLElement[];
  const leftovers: string[] = [];
  for (const violation of err.violations) {
    const span = spans.find((s) => {
      const field = s.dataset["field"] ?? "";
      return violation.field === field || violation.field.startsWith(field + ".") ||
        violation.field.startsWith(field + "[");
    });
    if (span !== undefined) {
      span.textContent = violation.message;
    } else {
      leftovers.push(`${violation.field}: ${violation.message}`);
    }
  }
  must<HTMLDivElement>("form-error").textContent = leftovers.join("; ");
}

// ---------------------------------------------------------------- job flow

function collectSpec(): JobSpec {
  const mask = state.mask;
  if (mask === null) {
    throw new EmptyMaskError("connect to a service before submitting");
  }
  const bytes = mask.exportBytes();
  state.lastUpload = bytes;
  const alphaSeg = [
    ...document.querySelectorAll<HTMLInputElement>(".alpha-seg"),
  ].map((el) => Number(el.value));
  return {
    prompt: must<HTMLInputElement>("prompt").value,
    mask_b64: bytesToBase64(bytes),
    mode: "interactive",
    seed: Number(must<HTMLInputElement>("seed").value),
    weights: {
      alpha_clip: Number(must<HTMLInputElement>("alpha-clip").value),
      alpha_seg: alphaSeg,
    },
    optimizer: { max_steps: Number(must<HTMLInputElement>("max-steps").value) },
    refine: { strength: Number(must<HTMLInputElement>("strength").value) },
    fan_out: {
      n_stage1: Number(must<HTMLInputElement>("n-stage1").value),
      n_stage2_per_stage1: Number(must<HTMLInputElement>("n-stage2").value),
    },
  };
}

function setStatus(next: JobStatusValue): void {
  if (state.status !== null && state.status !== next &&
      !canTransition(state.status, next)) {
    console.warn(`unexpected status transition ${state.status} -> ${next}`);
  }
  state.status = next;
  const pill = must<HTMLSpanElement>("status-pill");
  pill.textContent = next;
  pill.dataset["status"] = next;
  applyGates();
}

function candidateCard(
  galleryId: string,
  id: string,
  artifact: string,
  caption: string,
  withCheckbox: boolean,
): void {
  const gallery = must<HTMLDivElement>(galleryId);
  if (gallery.querySelector(`[data-candidate="${id}"]`) !== null) {
    return;
  }
  const card = document.createElement("figure");
  card.className = "card";
  card.dataset["candidate"] = id;
  const img = document.createElement("img");
  img.src = state.client?.artifactUrl(artifact) ?? "";
  img.alt = id;
  img.width = 144;
  img.height = 144;
  const cap = document.createElement("figcaption");
  if (withCheckbox) {
    const box = document.createElement("input");
    box.type = "checkbox";
    box.className = "candidate-check";
    box.value = id;
    cap.appendChild(box);
  }
  cap.appendChild(document.createTextNode(caption));
  card.append(img, cap);
  gallery.appendChild(card);
  applyGates();
}

function drawChart(): void {
  const canvas = must<HTMLCanvasElement>("loss-chart");
  const ctx = canvas.getContext("2d");
  if (ctx === null) {
    return;
  }
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#444";
  ctx.strokeRect(0.5, 0.5, canvas.width - 1, canvas.height - 1);
  for (const run of state.trace.runs()) {
    const line = state.trace.polyline(run, canvas.width, canvas.height);
    if (line.length === 0) {
      continue;
    }
    ctx.strokeStyle = RUN_COLORS[run % RUN_COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(line[0][0], line[0][1]);
    for (const [x, y] of line.slice(1)) {
      ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}

async function refreshJobDoc(): Promise<JobDoc | null> {
  if (state.client === null || state.jobId === null) {
    return null;
  }
  const doc = await state.client.getJob(state.jobId);
  for (const entry of doc.stage1) {
    if (entry.artifact !== null) {
      candidateCard(
        "stage1-gallery",
        entry.id,
        entry.artifact,
        `${entry.id} · seed ${entry.seed} · loss ${entry.final_loss.toFixed(4)}`,
        true,
      );
    }
  }
  for (const entry of doc.stage2) {
    if (entry.artifact !== null) {
      candidateCard(
        "stage2-gallery",
        entry.id,
        entry.artifact,
        `${entry.id} ← ${entry.source_id} · strength ${entry.strength}`,
        false,
      );
    }
  }
  must<HTMLInputElement>("override-strength").value = String(
    doc.refine.strength,
  );
  must<HTMLSpanElement>("override-strength-value").textContent = String(
    doc.refine.strength,
  );
  if (doc.error !== null) {
    must<HTMLDivElement>("job-error").textContent =
      `stage ${doc.failed_stage} failed: ${doc.error}`;
  }
  if (doc.mask_artifact !== null) {
    void renderServerEcho(doc.mask_artifact);
  }
  return doc;
}

/** Fetch the stored mask back and render it next to the canvas, flagging
 * whether the server returned the exact bytes we uploaded. */
async function renderServerEcho(artifactId: string): Promise<void> {
  if (state.client === null) {
    return;
  }
  const bytes = await state.client.fetchArtifact(artifactId);
  const echo = CanvasMask.fromBytes(bytes, state.vocab.length);
  const canvas = must<HTMLCanvasElement>("echo-canvas");
  canvas.width = echo.width;
  canvas.height = echo.height;
  const ctx = canvas.getContext("2d");
  if (ctx !== null) {
    const image = ctx.createImageData(echo.width, echo.height);
    echo.renderInto(image.data, state.palette);
    ctx.putImageData(image, 0, 0);
  }
  const verdict = must<HTMLSpanElement>("echo-verdict");
  const sent = state.lastUpload;
  const identical =
    sent !== null &&
    sent.length === bytes.length &&
    sent.every((v, i) => v === bytes[i]);
  verdict.textContent = identical
    ? "round trip byte-identical"
    : "round trip differs from upload";
  verdict.className = identical ? "ok" : "bad";
  must<HTMLDivElement>("echo-box").hidden = false;
}

function onEvent(_seq: number, event: JobEvent): void {
  switch (event.type) {
    case "status": {
      setStatus(event.status);
      if (event.error !== undefined) {
        must<HTMLDivElement>("job-error").textContent =
          `stage ${event.failed_stage} failed: ${event.error}`;
      }
      if (event.status === "awaiting_selection" || isTerminal(event.status)) {
        void refreshJobDoc();
      }
      break;
    }
    case "loss": {
      state.trace.add(event.run, {
        step: event.step,
        lClip: event.l_clip,
        lSegs: event.l_segs,
        lTotal: event.l_total,
      });
      drawChart();
      break;
    }
    case "candidate": {
      if (event.stage === 1) {
        candidateCard(
          "stage1-gallery",
          event.id,
          event.artifact,
          `${event.id} · loss ${event.final_loss.toFixed(4)}`,
          true,
        );
      } else {
        candidateCard(
          "stage2-gallery",
          event.id,
          event.artifact,
          `${event.id} ← ${event.source_id} · strength ${event.strength}`,
          false,
        );
      }
      break;
    }
    case "terminal": {
      setStatus(event.status);
      break;
    }
  }
}

async function submitJob(ev: Event): Promise<void> {
  ev.preventDefault();
  if (state.client === null) {
    return;
  }
  clearViolations();
  let spec: JobSpec;
  try {
    spec = collectSpec();
  } catch (err) {
    if (err instanceof EmptyMaskError) {
      must<HTMLDivElement>("mask-error").textContent = err.message;
      return;
    }
    throw err;
  }
  try {
    const { id } = await state.client.submitJob(spec);
    state.jobId = id;
    must<HTMLSpanElement>("job-id").textContent = id;
    must<HTMLDivElement>("job-view").hidden = false;
    state.trace.clear();
    drawChart();
    setStatus("pending");
    state.subscription = new AbortController();
    void state.client
      .subscribeEvents(id, onEvent, {
        signal: state.subscription.signal,
        retryDelayMs: 500,
      })
      .catch((err) => {
        must<HTMLDivElement>("job-error").textContent = String(err);
      });
  } catch (err) {
    if (err instanceof ValidationError) {
      renderViolations(err);
    } else if (err instanceof ApiError) {
      must<HTMLDivElement>("form-error").textContent = err.message;
    } else {
      throw err;
    }
  }
}

async function refineSelected(): Promise<void> {
  if (state.client === null || state.jobId === null) {
    return;
  }
  const errBox = must<HTMLDivElement>("select-error");
  errBox.textContent = "";
  const ids = [
    ...document.querySelectorAll<HTMLInputElement>(".candidate-check:checked"),
  ].map((el) => el.value);
  if (ids.length === 0) {
    errBox.textContent = "select at least one candidate";
    return;
  }
  const override = must<HTMLInputElement>("override-toggle").checked
    ? { strength: Number(must<HTMLInputElement>("override-strength").value) }
    : undefined;
  try {
    const doc = await state.client.selectCandidates(
      state.jobId,
      ids,
      override,
    );
    setStatus(doc.status);
  } catch (err) {
    if (err instanceof ValidationError) {
      errBox.textContent = err.violations
        .map((v) => `${v.field}: ${v.message}`)
        .join("; ");
    } else if (err instanceof ConflictError || err instanceof ApiError) {
      errBox.textContent = err.message;
    } else {
      throw err;
    }
  }
}

function resetForNewJob(): void {
  state.subscription?.abort();
  state.subscription = null;
  state.jobId = null;
  state.status = null;
  state.trace.clear();
  must<HTMLDivElement>("stage1-gallery").innerHTML = "";
  must<HTMLDivElement>("stage2-gallery").innerHTML = "";
  must<HTMLDivElement>("job-view").hidden = true;
  must<HTMLDivElement>("job-error").textContent = "";
  must<HTMLDivElement>("echo-box").hidden = true;
  must<HTMLSpanElement>("job-id").textContent = "";
  drawChart();
  applyGates();
}

// ---------------------------------------------------------------- startup

async function connect(): Promise<void> {
  const url = must<HTMLInputElement>("service-url").value;
  const statusEl = must<HTMLSpanElement>("connect-status");
  try {
    const client = new TcigClient(url);
    const vocabDoc = await client.getVocab();
    state.client = client;
    state.vocab = parseVocab(vocabDoc);
    state.palette = state.vocab.map((e) => e.color);
    statusEl.textContent = `connected · ${state.vocab.length} classes`;
    statusEl.className = "ok";
    must<HTMLElement>("studio").hidden = false;
    rebuildPalette();
    resetMask();
    applyGates();
  } catch (err) {
    statusEl.textContent = `cannot reach service: ${String(err)}`;
    statusEl.className = "bad";
  }
}

function wire(): void {
  must<HTMLButtonElement>("connect").addEventListener("click", () => {
    void connect();
  });

  const canvas = must<HTMLCanvasElement>("mask-canvas");
  canvas.addEventListener("mousedown", (ev) => {
    const mask = state.mask;
    if (mask === null || !allowedActions(state.status).has("draw")) {
      return;
    }
    mask.beginStroke();
    const [x, y] = canvasCell(canvas, ev);
    mask.paint(x, y);
    renderMask();
  });
  canvas.addEventListener("mousemove", (ev) => {
    if ((ev.buttons & 1) === 0 || state.mask === null) {
      return;
    }
    if (!allowedActions(state.status).has("draw")) {
      return;
    }
    const [x, y] = canvasCell(canvas, ev);
    state.mask.paint(x, y);
    renderMask();
  });
  for (const type of ["mouseup", "mouseleave"] as const) {
    canvas.addEventListener(type, () => {
      state.mask?.endStroke();
    });
  }

  must<HTMLInputElement>("brush-radius").addEventListener("input", () => {
    const radius = currentRadius();
    must<HTMLSpanElement>("brush-radius-value").textContent = String(radius);
    state.mask?.setBrush(state.mask.brush.classId, radius);
  });
  must<HTMLButtonElement>("undo").addEventListener("click", () => {
    state.mask?.undo();
    renderMask();
  });
  must<HTMLButtonElement>("clear").addEventListener("click", () => {
    state.mask?.clear();
    renderMask();
  });
  must<HTMLButtonElement>("resize").addEventListener("click", () => {
    resetMask();
  });

  must<HTMLInputElement>("strength").addEventListener("input", () => {
    must<HTMLSpanElement>("strength-value").textContent =
      must<HTMLInputElement>("strength").value;
  });
  must<HTMLInputElement>("override-strength").addEventListener("input", () => {
    must<HTMLSpanElement>("override-strength-value").textContent =
      must<HTMLInputElement>("override-strength").value;
  });
  must<HTMLInputElement>("override-toggle").addEventListener("change", () => {
    applyGates();
  });
  must<HTMLButtonElement>("add-guide-weight").addEventListener("click", () => {
    const list = must<HTMLDivElement>("alpha-seg-list");
    const index = list.querySelectorAll(".alpha-seg").length;
    const label = document.createElement("label");
    label.append(`guide weight [${index}] `);
    const input = document.createElement("input");
    input.type = "number";
    input.step = "0.5";
    input.value = "5.0";
    input.className = "alpha-seg";
    label.appendChild(input);
    list.appendChild(label);
  });

  must<HTMLFormElement>("job-form").addEventListener("submit", (ev) => {
    void submitJob(ev);
  });
  must<HTMLButtonElement>("refine-selected").addEventListener("click", () => {
    void refineSelected();
  });
  must<HTMLButtonElement>("new-job").addEventListener("click", () => {
    resetForNewJob();
  });

  applyGates();
}

if (typeof document !== "undefined" && document.getElementById("connect")) {
  wire();
}
