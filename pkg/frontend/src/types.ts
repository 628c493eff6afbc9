/** Payload types for the labeling service API (schema_version 1). */

export interface Intrinsics {
  fx: number;
  fy: number;
  px: number;
  py: number;
  width: number;
  height: number;
}

export interface FrameSummary {
  frame_id: string;
  has_camera_pose: boolean;
  n_annotations: number;
  labeled: boolean;
  valid: boolean;
}

export interface SessionSummary {
  session_id: string;
  solved: boolean;
  solve_rmsd: number | null;
  frames: FrameSummary[];
}

export interface ProjectSummary {
  schema_version: number;
  project_id: string;
  revision: number;
  keypoint_ids: string[];
  intrinsics: Intrinsics;
  sessions: SessionSummary[];
}

export interface AnnotationPoint {
  keypoint_id: string;
  u: number;
  v: number;
}

export interface AnnotationsResponse {
  schema_version: number;
  frame_id: string;
  revision: number;
  annotator: string;
  points: AnnotationPoint[];
}

export interface PutAnnotationsBody {
  revision: number;
  points: AnnotationPoint[];
  annotator?: string;
}

export interface TriangulatedKeypoint {
  keypoint_id: string;
  position: [number, number, number];
  residual_rms: number;
  n_rays: number;
}

export interface TriangulateResponse {
  schema_version: number;
  session_id: string;
  keypoints: TriangulatedKeypoint[];
  skipped: Record<string, string>;
}

export interface SolveResponse {
  schema_version: number;
  session_id: string;
  object_pose_in_marker: unknown;
  rmsd: number;
  n_keypoints: number;
  skipped: Record<string, string>;
}

export interface OverlayKeypoint {
  id: string;
  u: number;
  v: number;
  visible: boolean;
}

export interface BBoxPayload {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
  clamped: boolean;
}

export interface OverlayResponse {
  schema_version: number;
  frame_id: string;
  solve_rmsd: number | null;
  keypoints: OverlayKeypoint[];
  bbox: BBoxPayload;
}

export interface ApiErrorBody {
  schema_version?: number;
  error: string;
  message: string;
  field?: string;
  server_revision?: number;
}
