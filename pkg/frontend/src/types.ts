export interface AttributeInfo {
  name: string;
  levels: string[];
}

export interface TemplatesResponse {
  attributes: AttributeInfo[];
  templates: Record<string, Record<string, string>>;
}

export interface EditCurve {
  w: number;
  values: number[];
}

export interface EditResponse {
  edits: EditCurve[];
  zNorms: number[];
  reconstruction: number[] | null;
}

export interface SeriesSample {
  id: string;
  values: number[];
  attributes: Record<string, string>;
  description: string | null;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details?: unknown;
}

export interface EditRequestBody {
  series?: number[];
  seriesId?: string;
  instruction: string;
  weights: number[];
}
