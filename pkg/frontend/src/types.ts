// Wire shapes of the fleet-manager JSON API and event stream.

export interface Pose {
  x: number;
  y: number;
  z: number;
  yaw: number;
}

export interface WorkerDoc {
  id: string;
  name: string;
  worker_group: string;
  status: string;
  pose: Pose;
  battery: number;
  last_seen: string;
  address: string;
  port: number;
  version?: number;
}

export interface WorkstationDoc {
  id: string;
  name: string;
  station_type: string;
  pose: Pose;
  capacity: number;
  state: string;
  occupancy: number;
  version?: number;
}

export interface RoutingStepDoc {
  index: number;
  operation_name: string;
  station_type: string;
  worker_group: string;
  process_duration: number;
  priority: number;
}

export interface RoutingDoc {
  id: string;
  part_number: string;
  customer: string;
  steps: RoutingStepDoc[];
  active: boolean;
  version?: number;
}

export interface InstanceDoc {
  id: string;
  routing_id: string;
  current_step: number;
  phase: string;
  location: string;
  version?: number;
}

export interface JobDoc {
  id: string;
  worker_id: string;
  instance_id: string;
  step_index: number;
  phase: string;
  version?: number;
}

export interface AuditEvent {
  seq: number;
  timestamp: string;
  kind: string;
  subject_id: string;
  payload: Record<string, any>;
}

export interface Snapshot {
  workers: WorkerDoc[];
  workstations: WorkstationDoc[];
  routings: RoutingDoc[];
  instances: InstanceDoc[];
  jobs: JobDoc[];
}
