/** Annotation session view-model: a pure function of server state plus
 * unsaved local edits. All mutations go through methods here; the DOM layer
 * only renders what this class exposes.
 */

import type {
  AnnotationPoint,
  AnnotationsResponse,
  ProjectSummary,
  SolveResponse,
  TriangulateResponse,
} from "./types.js";

export type ResidualLevel = "green" | "amber" | "red";

export interface ResidualThresholds {
  /** below this residual (meters) a badge is green */
  greenM: number;
  /** below this residual a badge is amber; red beyond */
  amberM: number;
}

export const DEFAULT_THRESHOLDS: ResidualThresholds = { greenM: 0.005, amberM: 0.015 };

export interface ResidualBadge {
  keypointId: string;
  residualRms: number | null;
  nRays: number | null;
  level: ResidualLevel | null;
  skipped: string | null;
}

export interface Placement {
  u: number;
  v: number;
}

interface FrameEdits {
  /** at most one placement per keypoint per frame */
  points: Map<string, Placement>;
  undo: Map<string, Placement>[];
  savedRevision: number;
  savedPoints: Map<string, Placement>;
}

export class AnnotationSession {
  readonly sessionId: string;
  readonly keypointIds: string[];
  readonly frameIds: string[];

  activeFrameId: string | null = null;
  selectedKeypoint: string | null = null;
  solved: boolean;
  solveRmsd: number | null;
  triangulated: Map<string, ResidualBadge> = new Map();
  skipped: Record<string, string> = {};

  private frames: Map<string, FrameEdits> = new Map();

  constructor(
    project: ProjectSummary,
    sessionId: string,
    readonly thresholds: ResidualThresholds = DEFAULT_THRESHOLDS,
  ) {
    const session = project.sessions.find((s) => s.session_id === sessionId);
    if (!session) throw new Error(`unknown session ${sessionId}`);
    this.sessionId = sessionId;
    this.keypointIds = [...project.keypoint_ids];
    this.frameIds = session.frames.map((f) => f.frame_id);
    this.solved = session.solved;
    this.solveRmsd = session.solve_rmsd;
    for (const frame of session.frames) {
      this.frames.set(frame.frame_id, {
        points: new Map(),
        undo: [],
        savedRevision: -1,
        savedPoints: new Map(),
      });
    }
    this.activeFrameId = this.frameIds[0] ?? null;
    this.selectedKeypoint = this.keypointIds[0] ?? null;
  }

  private frame(frameId: string): FrameEdits {
    const fr = this.frames.get(frameId);
    if (!fr) throw new Error(`unknown frame ${frameId}`);
    return fr;
  }

  selectFrame(frameId: string): void {
    this.frame(frameId);
    this.activeFrameId = frameId;
  }

  selectKeypoint(keypointId: string): void {
    if (!this.keypointIds.includes(keypointId)) {
      throw new Error(`unknown keypoint ${keypointId}`);
    }
    this.selectedKeypoint = keypointId;
  }

  /** Record a sub-pixel click; a repeated keypoint replaces its placement. */
  place(frameId: string, keypointId: string, u: number, v: number): void {
    if (!this.keypointIds.includes(keypointId)) {
      throw new Error(`unknown keypoint ${keypointId}`);
    }
    const fr = this.frame(frameId);
    fr.undo.push(new Map(fr.points));
    fr.points.set(keypointId, { u, v });
  }

  remove(frameId: string, keypointId: string): void {
    const fr = this.frame(frameId);
    if (!fr.points.has(keypointId)) return;
    fr.undo.push(new Map(fr.points));
    fr.points.delete(keypointId);
  }

  undo(frameId: string): boolean {
    const fr = this.frame(frameId);
    const previous = fr.undo.pop();
    if (!previous) return false;
    fr.points = previous;
    return true;
  }

  placements(frameId: string): ReadonlyMap<string, Placement> {
    return this.frame(frameId).points;
  }

  workingPoints(frameId: string): AnnotationPoint[] {
    return [...this.frame(frameId).points.entries()].map(([keypoint_id, p]) => ({
      keypoint_id,
      u: p.u,
      v: p.v,
    }));
  }

  savedRevision(frameId: string): number {
    return this.frame(frameId).savedRevision;
  }

  /** Unsaved edits are marked in the UI; true when working != saved. */
  isDirty(frameId: string): boolean {
    const fr = this.frame(frameId);
    if (fr.points.size !== fr.savedPoints.size) return true;
    for (const [kid, p] of fr.points) {
      const saved = fr.savedPoints.get(kid);
      if (!saved || saved.u !== p.u || saved.v !== p.v) return true;
    }
    return false;
  }

  /** Adopt the server copy (GET response) as both saved and working state. */
  loadSaved(response: AnnotationsResponse): void {
    const fr = this.frame(response.frame_id);
    fr.savedRevision = response.revision;
    fr.savedPoints = new Map(
      response.points.map((p) => [p.keypoint_id, { u: p.u, v: p.v }]),
    );
    fr.points = new Map(fr.savedPoints);
    fr.undo = [];
  }

  /** After a successful PUT the working copy becomes the saved copy. */
  markSaved(frameId: string, revision: number): void {
    const fr = this.frame(frameId);
    fr.savedRevision = revision;
    fr.savedPoints = new Map(fr.points);
  }

  applyTriangulation(response: TriangulateResponse): void {
    this.triangulated.clear();
    this.skipped = { ...response.skipped };
    for (const kp of response.keypoints) {
      this.triangulated.set(kp.keypoint_id, {
        keypointId: kp.keypoint_id,
        residualRms: kp.residual_rms,
        nRays: kp.n_rays,
        level: this.residualLevel(kp.residual_rms),
        skipped: null,
      });
    }
    for (const [kid, reason] of Object.entries(response.skipped)) {
      this.triangulated.set(kid, {
        keypointId: kid,
        residualRms: null,
        nRays: null,
        level: null,
        skipped: reason,
      });
    }
  }

  applySolve(response: SolveResponse): void {
    this.solved = true;
    this.solveRmsd = response.rmsd;
  }

  residualLevel(residualM: number): ResidualLevel {
    if (residualM < this.thresholds.greenM) return "green";
    if (residualM < this.thresholds.amberM) return "amber";
    return "red";
  }

  badge(keypointId: string): ResidualBadge | null {
    return this.triangulated.get(keypointId) ?? null;
  }

  /** Overlay review is gated on a successful solve. */
  overlayEnabled(): boolean {
    return this.solved;
  }

  /** A solve whose alignment residual is above the amber threshold warrants a banner. */
  highRmsdWarning(): string | null {
    if (this.solveRmsd === null || !this.solved) return null;
    if (this.solveRmsd >= this.thresholds.amberM) {
      return `object pose residual ${(this.solveRmsd * 1000).toFixed(1)} mm is high; re-check annotations`;
    }
    return null;
  }
}
