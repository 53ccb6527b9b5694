/** Wire types mirrored from the hub's canonical JSON payloads. */

export type Phase =
  | "registered" | "planned" | "executing" | "paused"
  | "completed" | "failed" | "aborted" | "archived";

export type TaskStateName =
  | "pending" | "dispatched" | "running" | "completed"
  | "failed" | "cancelled" | "compensated";

export interface HubEvent {
  seq: number;
  timestamp: string;
  experiment_id: string;
  kind: string;
  actor: string;
  payload: Record<string, unknown>;
  prev_hash: string;
  hash: string;
}

export interface TaskView {
  node_id: string;
  state: TaskStateName;
  attempts: number;
  tool_id?: string;
  server_id?: string;
  outputs?: Record<string, unknown>;
  latency_ms?: number;
  progress?: number;
  error?: string;
}

export interface SpecNode {
  node_id: string;
  tool_id: string;
  capability_class: string;
  params: Record<string, unknown>;
  depends_on: string[];
}

export interface WorkflowSpec {
  spec_id: string;
  experiment_id: string;
  version: number;
  nodes: SpecNode[];
  created_from: string;
}

export interface PlanScore {
  latency_ms: number;
  cost_units: number;
  risk: number;
  total: number;
}

export interface GovernanceWarning {
  kind: string;
  detail: string;
  node_ids: string[];
}

export interface PlanCandidate {
  plan_id: string;
  spec: WorkflowSpec;
  score: PlanScore;
  rationale: string;
  warnings: GovernanceWarning[];
}

export interface ExperimentContext {
  experiment_id: string;
  experiment_type: string;
  goal: string;
  goal_tags: string[];
  priority: number;
  owner: string;
  created_at: string;
}

export interface ExperimentStatus {
  context: ExperimentContext;
  phase: Phase;
  task_states: Record<string, TaskView>;
  selected_plan_id: string;
  active_spec_version: number;
  plans: PlanCandidate[];
  last_seq: number;
}
