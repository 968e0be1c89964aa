/** DOM wiring: upload/drag-drop, slice slider, prediction panel with
 * per-slice confidence bars, standardize/override controls, and save.
 */

import { ApiClient, ORIENT_CODES, type OrientCode } from "./api.js";
import {
  type UiVolumeState,
  type Action,
  canAdjust,
  canSave,
  initialState,
  reduce,
} from "./state.js";

const api = new ApiClient("..");

let state: UiVolumeState = initialState;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function dispatch(action: Action): void {
  state = reduce(state, action);
  render();
}

async function doUpload(file: File): Promise<void> {
  dispatch({ kind: "upload-started" });
  try {
    const result = await api.upload(await file.arrayBuffer());
    dispatch({ kind: "upload-succeeded", result });
    const prediction = await api.prediction(result.id);
    dispatch({ kind: "prediction-received", prediction });
  } catch (e) {
    dispatch({ kind: "upload-failed", message: String(e) });
  }
}

async function doAdjust(code: OrientCode): Promise<void> {
  if (!state.volumeId) return;
  dispatch({ kind: "adjust-started" });
  try {
    const prediction = await api.adjust(state.volumeId, code);
    dispatch({ kind: "adjust-succeeded", prediction, applied: code });
  } catch (e) {
    dispatch({ kind: "adjust-failed", message: String(e) });
  }
}

async function doSave(): Promise<void> {
  if (!state.volumeId) return;
  try {
    const blob = await api.save(state.volumeId);
    const url = URL.createObjectURL(blob);
    const a = document.createElement("a");
    a.href = url;
    a.download = "standardized.nii";
    a.click();
    URL.revokeObjectURL(url);
    dispatch({ kind: "save-succeeded" });
  } catch (e) {
    dispatch({ kind: "save-failed", message: String(e) });
  }
}

function render(): void {
  const banner = $("error-banner");
  banner.hidden = state.error === null;
  banner.querySelector("span")!.textContent = state.error ?? "";

  const slider = $("slice-slider") as HTMLInputElement;
  const hasVolume = state.volumeId !== null;
  slider.disabled = !hasVolume || state.nSlices <= 1;
  slider.max = String(Math.max(state.nSlices - 1, 0));
  slider.value = String(state.sliceIndex);
  $("slice-label").textContent = hasVolume
    ? `slice ${state.sliceIndex + 1} / ${state.nSlices}`
    : "no volume loaded";

  const img = $("slice-view") as HTMLImageElement;
  if (hasVolume) {
    img.src = api.sliceUrl(state.volumeId!, state.sliceIndex);
    img.hidden = false;
  } else {
    img.hidden = true;
  }

  const p = state.prediction;
  $("consensus-code").textContent = p ? p.consensus : "—";
  $("consensus-conf").textContent = p
    ? `${(p.confidence * 100).toFixed(1)}%${p.unanimous ? " (unanimous)" : ""}`
    : "";
  const bars = $("slice-bars");
  bars.replaceChildren();
  if (p) {
    for (const s of p.slices) {
      const row = document.createElement("div");
      row.className = "bar-row";
      const label = document.createElement("span");
      label.textContent = `#${s.index} → ${s.code}`;
      const track = document.createElement("div");
      track.className = "bar-track";
      const fill = document.createElement("div");
      fill.className = "bar-fill";
      fill.style.width = `${Math.round(s.confidence * 100)}%`;
      track.appendChild(fill);
      row.append(label, track);
      bars.appendChild(row);
    }
  }

  ($("standardize-btn") as HTMLButtonElement).disabled =
    !canAdjust(state) || p === null || p.consensus === "000";
  ($("apply-btn") as HTMLButtonElement).disabled = !canAdjust(state);
  ($("save-btn") as HTMLButtonElement).disabled = !canSave(state);
  ($("code-select") as HTMLSelectElement).value = state.pendingCode;
  $("dirty-flag").hidden = !state.dirty;
}

function wire(): void {
  const select = $("code-select") as HTMLSelectElement;
  for (const code of ORIENT_CODES) {
    const opt = document.createElement("option");
    opt.value = code;
    opt.textContent = code;
    select.appendChild(opt);
  }
  select.addEventListener("change", () =>
    dispatch({ kind: "pending-code-changed", code: select.value }));

  const input = $("file-input") as HTMLInputElement;
  input.addEventListener("change", () => {
    const file = input.files?.[0];
    if (file) void doUpload(file);
  });
  const drop = $("drop-zone");
  drop.addEventListener("dragover", (e) => {
    e.preventDefault();
    drop.classList.add("over");
  });
  drop.addEventListener("dragleave", () => drop.classList.remove("over"));
  drop.addEventListener("drop", (e) => {
    e.preventDefault();
    drop.classList.remove("over");
    const file = e.dataTransfer?.files?.[0];
    if (file) void doUpload(file);
  });

  const slider = $("slice-slider") as HTMLInputElement;
  slider.addEventListener("input", () =>
    dispatch({ kind: "slice-changed", index: Number(slider.value) }));
  document.addEventListener("keydown", (e) => {
    if (e.key === "ArrowRight") {
      dispatch({ kind: "slice-changed", index: state.sliceIndex + 1 });
    } else if (e.key === "ArrowLeft") {
      dispatch({ kind: "slice-changed", index: state.sliceIndex - 1 });
    }
  });

  $("standardize-btn").addEventListener("click", () => {
    const p = state.prediction;
    if (p) void doAdjust(p.consensus);
  });
  $("apply-btn").addEventListener("click", () => void doAdjust(state.pendingCode));
  $("save-btn").addEventListener("click", () => void doSave());
  $("error-banner").querySelector("button")!.addEventListener("click", () =>
    dispatch({ kind: "error-dismissed" }));

  window.addEventListener("beforeunload", (e) => {
    if (state.dirty) e.preventDefault();
  });

  render();
}

wire();
