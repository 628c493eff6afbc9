/** DOM wiring: thumbnails, palette, annotate canvas with loupe, review tab. */

import { ApiClient, ApiRequestError } from "./api.js";
import { keypointColor } from "./colors.js";
import { badgeColor, drawImage, drawLoupe, drawOverlay, drawPlacements } from "./render.js";
import { AnnotationSession } from "./state.js";
import type { OverlayResponse, ProjectSummary } from "./types.js";
import { Viewport } from "./viewport.js";

const api = new ApiClient();

type Tab = "annotate" | "review";

class App {
  session!: AnnotationSession;
  project!: ProjectSummary;
  viewport = new Viewport();
  tab: Tab = "annotate";
  image: HTMLImageElement | null = null;
  overlay: OverlayResponse | null = null;
  panning = false;
  panStart = { x: 0, y: 0 };

  canvas = document.getElementById("canvas") as HTMLCanvasElement;
  loupe = document.getElementById("loupe") as HTMLCanvasElement;
  frameList = document.getElementById("frames") as HTMLUListElement;
  palette = document.getElementById("palette") as HTMLUListElement;
  status = document.getElementById("status") as HTMLDivElement;
  banner = document.getElementById("banner") as HTMLDivElement;
  solvePanel = document.getElementById("solve-panel") as HTMLDivElement;

  async start(): Promise<void> {
    this.project = await api.getProject();
    const sessionId = this.project.sessions[0]?.session_id;
    if (!sessionId) {
      this.note("project has no sessions yet");
      return;
    }
    this.session = new AnnotationSession(this.project, sessionId);
    this.bind();
    if (this.session.activeFrameId) await this.openFrame(this.session.activeFrameId);
    this.renderChrome();
  }

  bind(): void {
    (document.getElementById("save") as HTMLButtonElement).onclick = () => this.save();
    (document.getElementById("undo") as HTMLButtonElement).onclick = () => {
      if (this.session.activeFrameId && this.session.undo(this.session.activeFrameId)) {
        this.renderCanvas();
        this.renderChrome();
      }
    };
    (document.getElementById("triangulate") as HTMLButtonElement).onclick = () =>
      this.triangulate();
    (document.getElementById("solve") as HTMLButtonElement).onclick = () => this.solve();
    (document.getElementById("tab-annotate") as HTMLButtonElement).onclick = () =>
      this.switchTab("annotate");
    (document.getElementById("tab-review") as HTMLButtonElement).onclick = () =>
      this.switchTab("review");

    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      const rect = this.canvas.getBoundingClientRect();
      const anchor = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
      this.viewport.zoomAt(anchor, Math.exp(-ev.deltaY * 0.0015));
      this.renderCanvas();
    });
    this.canvas.addEventListener("mousedown", (ev) => {
      if (ev.button === 1 || ev.button === 2 || ev.shiftKey) {
        this.panning = true;
        this.panStart = { x: ev.clientX, y: ev.clientY };
        ev.preventDefault();
      }
    });
    window.addEventListener("mousemove", (ev) => {
      if (this.panning) {
        this.viewport.pan(ev.clientX - this.panStart.x, ev.clientY - this.panStart.y);
        this.panStart = { x: ev.clientX, y: ev.clientY };
        this.renderCanvas();
        return;
      }
      this.updateLoupe(ev);
    });
    window.addEventListener("mouseup", () => {
      this.panning = false;
    });
    this.canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
    this.canvas.addEventListener("click", (ev) => this.onCanvasClick(ev));
  }

  switchTab(tab: Tab): void {
    if (tab === "review" && !this.session.overlayEnabled()) return;
    this.tab = tab;
    this.overlay = null;
    if (tab === "review" && this.session.activeFrameId) {
      void this.loadOverlay(this.session.activeFrameId);
    }
    this.renderCanvas();
    this.renderChrome();
  }

  async openFrame(frameId: string): Promise<void> {
    this.session.selectFrame(frameId);
    const saved = await api.getAnnotations(frameId);
    // unsaved local edits win over a re-fetch of the same revision
    if (!this.session.isDirty(frameId) || saved.revision !== this.session.savedRevision(frameId)) {
      this.session.loadSaved(saved);
    }
    this.image = await this.loadImage(api.imageUrl(frameId));
    this.viewport.fit(this.canvas.width, this.canvas.height, this.image.width, this.image.height);
    if (this.tab === "review") await this.loadOverlay(frameId);
    this.renderCanvas();
    this.renderChrome();
  }

  loadImage(url: string): Promise<HTMLImageElement> {
    return new Promise((resolve, reject) => {
      const img = new Image();
      img.onload = () => resolve(img);
      img.onerror = () => reject(new Error(`failed to load ${url}`));
      img.src = url;
    });
  }

  onCanvasClick(ev: MouseEvent): void {
    if (this.tab !== "annotate" || !this.session.activeFrameId || this.panning) return;
    const kid = this.session.selectedKeypoint;
    if (!kid) {
      this.note("pick a keypoint in the palette first");
      return;
    }
    const rect = this.canvas.getBoundingClientRect();
    const p = this.viewport.canvasToImage({
      x: ev.clientX - rect.left,
      y: ev.clientY - rect.top,
    });
    this.session.place(this.session.activeFrameId, kid, p.x, p.y);
    this.renderCanvas();
    this.renderChrome();
  }

  updateLoupe(ev: MouseEvent): void {
    if (this.tab !== "annotate" || !this.image) return;
    const rect = this.canvas.getBoundingClientRect();
    if (
      ev.clientX < rect.left ||
      ev.clientX >= rect.right ||
      ev.clientY < rect.top ||
      ev.clientY >= rect.bottom
    ) {
      this.loupe.style.display = "none";
      return;
    }
    const p = this.viewport.canvasToImage({
      x: ev.clientX - rect.left,
      y: ev.clientY - rect.top,
    });
    this.loupe.style.display = "block";
    this.loupe.style.left = `${ev.clientX - rect.left + 24}px`;
    this.loupe.style.top = `${ev.clientY - rect.top + 24}px`;
    drawLoupe(this.loupe.getContext("2d")!, this.image, p);
  }

  async save(): Promise<void> {
    const frameId = this.session.activeFrameId;
    if (!frameId) return;
    try {
      const result = await api.putAnnotations(frameId, {
        revision: this.session.savedRevision(frameId),
        points: this.session.workingPoints(frameId),
        annotator: "annotator-ui",
      });
      this.session.markSaved(frameId, result.revision);
      this.note(`saved ${frameId} at revision ${result.revision}`);
    } catch (err) {
      if (err instanceof ApiRequestError && err.status === 409) {
        this.note(`conflict: ${err.body.message} — reload the frame to pick up changes`);
      } else {
        this.surface(err);
      }
    }
    this.renderChrome();
  }

  async triangulate(): Promise<void> {
    try {
      const result = await api.triangulate(this.session.sessionId);
      this.session.applyTriangulation(result);
      this.note(
        `triangulated ${result.keypoints.length} keypoints, ` +
          `${Object.keys(result.skipped).length} skipped`,
      );
    } catch (err) {
      this.surface(err);
    }
    this.renderChrome();
  }

  async solve(): Promise<void> {
    try {
      const result = await api.solve(this.session.sessionId);
      this.session.applySolve(result);
      this.note(`object pose solved, rmsd ${(result.rmsd * 1000).toFixed(2)} mm`);
    } catch (err) {
      this.surface(err);
    }
    this.renderChrome();
  }

  async loadOverlay(frameId: string): Promise<void> {
    try {
      this.overlay = await api.getOverlay(frameId);
    } catch (err) {
      this.overlay = null;
      this.surface(err);
    }
    this.renderCanvas();
  }

  surface(err: unknown): void {
    if (err instanceof ApiRequestError) {
      const field = err.body.field ? ` (${err.body.field})` : "";
      this.note(`${err.body.error}: ${err.body.message}${field}`);
    } else {
      this.note(String(err));
    }
  }

  note(text: string): void {
    this.status.textContent = text;
  }

  renderCanvas(): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (!this.image) return;
    drawImage(ctx, this.viewport, this.image, this.image.width, this.image.height);
    const frameId = this.session.activeFrameId;
    if (!frameId) return;
    if (this.tab === "annotate") {
      drawPlacements(
        ctx,
        this.viewport,
        this.session.placements(frameId),
        this.session.keypointIds,
        this.session.selectedKeypoint,
      );
    } else if (this.overlay) {
      drawOverlay(ctx, this.viewport, this.overlay, this.session.keypointIds);
    }
  }

  renderChrome(): void {
    // frame thumbnails
    this.frameList.innerHTML = "";
    for (const frameId of this.session.frameIds) {
      const li = document.createElement("li");
      li.className = frameId === this.session.activeFrameId ? "active" : "";
      const n = this.session.placements(frameId).size;
      const dirty = this.session.isDirty(frameId) ? " *" : "";
      li.textContent = `${frameId} (${n})${dirty}`;
      li.onclick = () => void this.openFrame(frameId);
      this.frameList.appendChild(li);
    }

    // keypoint palette with residual badges
    this.palette.innerHTML = "";
    this.session.keypointIds.forEach((kid, i) => {
      const li = document.createElement("li");
      li.className = kid === this.session.selectedKeypoint ? "selected" : "";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = keypointColor(i, this.session.keypointIds.length);
      li.appendChild(swatch);
      li.appendChild(document.createTextNode(` ${kid} `));
      const badge = this.session.badge(kid);
      if (badge) {
        const b = document.createElement("span");
        b.className = "badge";
        b.style.background = badgeColor(badge.level);
        b.textContent = badge.skipped
          ? `skipped: ${badge.skipped}`
          : `${((badge.residualRms ?? 0) * 1000).toFixed(1)} mm / ${badge.nRays} views`;
        b.title = badge.skipped ?? "";
        li.appendChild(b);
      }
      li.onclick = () => {
        this.session.selectKeypoint(kid);
        this.renderChrome();
        this.renderCanvas();
      };
      this.palette.appendChild(li);
    });

    // solve status + review gating + warning banner
    this.solvePanel.textContent = this.session.solved
      ? `solved, rmsd ${((this.session.solveRmsd ?? 0) * 1000).toFixed(2)} mm`
      : "object pose not solved yet";
    const reviewTab = document.getElementById("tab-review") as HTMLButtonElement;
    reviewTab.disabled = !this.session.overlayEnabled();
    reviewTab.classList.toggle("active", this.tab === "review");
    (document.getElementById("tab-annotate") as HTMLButtonElement).classList.toggle(
      "active",
      this.tab === "annotate",
    );
    const warning = this.session.highRmsdWarning();
    this.banner.style.display = warning ? "block" : "none";
    this.banner.textContent = warning ?? "";
  }
}

new App().start().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = String(err);
});
