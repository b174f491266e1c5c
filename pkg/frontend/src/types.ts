/** Wire types for the annotation service API. */

export type Point = [number, number];

export interface SessionInfo {
  session_id: string;
  revision: number;
  width: number;
  height: number;
}

export interface RegionQuadruple {
  left: Point;
  right: Point;
  top: Point;
  bottom: Point;
}

export interface RegionSummary {
  region_id: number;
  pixel_count: number;
  mean_probability: number;
}

export interface SegmentationResponse {
  session_id: string;
  revision: number;
  n_regions: number;
  /** base64 16-bit grayscale PNG, values 1..n_regions */
  label_png: string;
  summary: RegionSummary[];
  warnings?: string[];
}

export interface ScribblePayload {
  region_id: number;
  points: Point[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export interface LabelImage {
  width: number;
  height: number;
  data: Uint16Array;
}
