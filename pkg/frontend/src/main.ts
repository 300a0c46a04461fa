import { ApiClient } from "./api.js";
import { Editor } from "./editor.js";

function byId<T extends HTMLElement>(id: string): T {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing #${id}`);
  return element as T;
}

const api = new ApiClient("");
const editor = new Editor(
  api,
  byId<HTMLCanvasElement>("frame-canvas"),
  byId<HTMLImageElement>("result-image"),
  byId<HTMLElement>("status"),
);

const domainSelect = byId<HTMLSelectElement>("domain");
const frameInput = byId<HTMLInputElement>("frame-file");
frameInput.addEventListener("change", () => {
  const file = frameInput.files?.[0];
  if (file) void editor.loadFrame(file, domainSelect.value);
});

byId<HTMLButtonElement>("undo").addEventListener("click", () => editor.undo());
byId<HTMLButtonElement>("export").addEventListener("click", () => editor.exportResult());

const importInput = byId<HTMLInputElement>("import-file");
importInput.addEventListener("change", () => {
  const file = importInput.files?.[0];
  if (file) void editor.importKeypoints(file);
});

void api.model()
  .then((info) => {
    byId<HTMLElement>("status").textContent =
      `model loaded: K=${info.K}, ${info.resolution}px (${info.checkpoint_id})`;
  })
  .catch(() => {
    byId<HTMLElement>("status").textContent =
      "service unreachable; start it with: jokr serve --ckpt <dir>";
  });
