// Event-sourced view model: the UI state is a pure fold over (initial
// snapshot, ordered event list). Replaying the same events always produces
// the same model; reconnecting from the last seen seq converges with a fresh
// full reload.
const FEED_LIMIT = 200;
export function emptyView() {
    return {
        workers: {},
        workstations: {},
        routings: {},
        instances: {},
        completedCount: 0,
        eventFeed: [],
        connection: { connected: false, last_seq: -1 },
    };
}
export function viewFromSnapshot(snapshot) {
    const view = emptyView();
    for (const w of snapshot.workers) {
        view.workers[w.id] = {
            id: w.id,
            name: w.name,
            worker_group: w.worker_group,
            status: w.status,
            battery: w.battery,
            current_job: null,
        };
    }
    for (const job of snapshot.jobs) {
        if (job.phase !== "delivered" && view.workers[job.worker_id]) {
            view.workers[job.worker_id].current_job = job.id;
        }
    }
    for (const s of snapshot.workstations) {
        view.workstations[s.id] = {
            id: s.id,
            name: s.name,
            station_type: s.station_type,
            state: s.state,
            occupancy: s.occupancy,
            capacity: s.capacity,
        };
    }
    for (const r of snapshot.routings) {
        view.routings[r.id] = {
            id: r.id,
            part_number: r.part_number,
            customer: r.customer,
            steps: r.steps.length,
            active: r.active,
            pending: 0,
        };
    }
    for (const inst of snapshot.instances) {
        view.instances[inst.id] = {
            id: inst.id,
            routing_id: inst.routing_id,
            phase: inst.phase,
            current_step: inst.current_step,
        };
        if (inst.phase === "completed") {
            view.completedCount += 1;
        }
    }
    return view;
}
function summarize(event) {
    const p = event.payload;
    switch (event.kind) {
        case "task_assigned":
            return `${p.worker_id} assigned ${p.instance_id} step ${p.step_index} -> ${p.destination_station}`;
        case "worker_activity":
            return `${p.worker_id ?? event.subject_id}: ${p.action}${p.phase ? " " + p.phase : ""}`;
        case "workstation_state":
            return `${p.station_id}: ${p.action} (${p.occupancy}/${p.capacity} ${p.state})`;
        case "routing_activated":
            return `routing ${p.routing_id} activated x${p.quantity}`;
        case "routing_completed":
            return `${p.instance_id} completed (${p.part_number})`;
        case "resource_changed":
            return `${p.collection}/${p.id} ${p.action}`;
        default:
            return event.kind;
    }
}
function workerRow(view, workerId) {
    let row = view.workers[workerId];
    if (!row) {
        row = {
            id: workerId,
            name: workerId,
            worker_group: "",
            status: "idle",
            battery: 1.0,
            current_job: null,
        };
        view.workers[workerId] = row;
    }
    return row;
}
function applyResourceChanged(view, p) {
    const body = p.body ?? {};
    if (p.collection === "workers") {
        if (p.action === "deleted") {
            delete view.workers[p.id];
            return;
        }
        const row = workerRow(view, p.id);
        row.name = body.name ?? row.name;
        row.worker_group = body.worker_group ?? row.worker_group;
        row.status = body.status ?? row.status;
        row.battery = body.battery ?? row.battery;
    }
    else if (p.collection === "workstations") {
        if (p.action === "deleted") {
            delete view.workstations[p.id];
            return;
        }
        view.workstations[p.id] = {
            id: p.id,
            name: body.name ?? p.id,
            station_type: body.station_type ?? "",
            state: body.state ?? "free",
            occupancy: body.occupancy ?? 0,
            capacity: body.capacity ?? 1,
        };
    }
    else if (p.collection === "routings") {
        if (p.action === "deleted") {
            delete view.routings[p.id];
            return;
        }
        const previous = view.routings[p.id];
        view.routings[p.id] = {
            id: p.id,
            part_number: body.part_number ?? "",
            customer: body.customer ?? "",
            steps: Array.isArray(body.steps) ? body.steps.length : 0,
            active: body.active ?? true,
            pending: previous ? previous.pending : 0,
        };
    }
}
function applyWorkerActivity(view, p) {
    switch (p.action) {
        case "progress": {
            const row = workerRow(view, p.worker_id);
            row.status = "working";
            if (typeof p.battery === "number")
                row.battery = p.battery;
            row.current_job = p.job_id ?? row.current_job;
            break;
        }
        case "job_completed": {
            const row = workerRow(view, p.worker_id);
            row.status = "idle";
            row.current_job = null;
            break;
        }
        case "battery_low": {
            const row = workerRow(view, p.worker_id);
            row.status = "charging";
            if (typeof p.battery === "number")
                row.battery = p.battery;
            break;
        }
        case "job_reclaimed": {
            const row = workerRow(view, p.worker_id);
            row.status = "offline";
            row.current_job = null;
            if (p.instance_id && view.instances[p.instance_id]) {
                view.instances[p.instance_id].phase = "awaiting_transport";
            }
            break;
        }
        case "status_changed": {
            workerRow(view, p.worker_id).status = p.status ?? "idle";
            break;
        }
        case "instance_cancelled": {
            delete view.instances[p.instance_id];
            if (p.worker_id) {
                const row = workerRow(view, p.worker_id);
                row.status = p.status ?? "idle";
                row.current_job = null;
            }
            break;
        }
    }
}
export function applyEvent(view, event) {
    if (event.seq > view.connection.last_seq) {
        view.connection.last_seq = event.seq; // never decreases
    }
    const p = event.payload;
    switch (event.kind) {
        case "routing_activated": {
            const routing = view.routings[p.routing_id];
            if (routing) {
                routing.pending = Math.max(0, routing.pending - (p.quantity ?? 0));
            }
            for (const instanceId of p.instance_ids ?? []) {
                view.instances[instanceId] = {
                    id: instanceId,
                    routing_id: p.routing_id,
                    phase: "awaiting_transport",
                    current_step: 0,
                };
            }
            break;
        }
        case "task_assigned": {
            const inst = view.instances[p.instance_id];
            if (inst) {
                inst.phase = "in_transit";
                inst.current_step = p.step_index;
            }
            const row = workerRow(view, p.worker_id);
            row.status = "assigned";
            row.current_job = p.job_id;
            break;
        }
        case "workstation_state": {
            const station = view.workstations[p.station_id];
            if (station) {
                station.occupancy = p.occupancy ?? station.occupancy;
                station.state = p.state ?? station.state;
            }
            const inst = p.instance_id ? view.instances[p.instance_id] : undefined;
            if (inst && p.action === "processing_started") {
                inst.phase = "processing";
                inst.current_step = p.step_index;
            }
            else if (inst && p.action === "processing_finished") {
                inst.phase = p.next_phase ?? "awaiting_transport";
                if (inst.phase === "awaiting_transport") {
                    inst.current_step = p.step_index + 1;
                }
            }
            break;
        }
        case "routing_completed": {
            const inst = view.instances[p.instance_id];
            if (inst)
                inst.phase = "completed";
            view.completedCount += 1;
            break;
        }
        case "worker_activity":
            applyWorkerActivity(view, p);
            break;
        case "resource_changed":
            applyResourceChanged(view, p);
            break;
    }
    view.eventFeed.push({
        seq: event.seq,
        timestamp: event.timestamp,
        kind: event.kind,
        summary: summarize(event),
    });
    if (view.eventFeed.length > FEED_LIMIT) {
        view.eventFeed.splice(0, view.eventFeed.length - FEED_LIMIT);
    }
    return view;
}
export function project(view, events) {
    for (const event of events) {
        applyEvent(view, event);
    }
    return view;
}
// The parts of the model that a fresh snapshot can also produce, for
// projection-equivalence checks (the feed and seq counters are stream-only).
export function comparableModel(view) {
    const workers = {};
    for (const [id, w] of Object.entries(view.workers)) {
        workers[id] = {
            name: w.name,
            status: w.status,
            battery: w.battery,
            current_job: w.current_job,
        };
    }
    const workstations = {};
    for (const [id, s] of Object.entries(view.workstations)) {
        workstations[id] = { state: s.state, occupancy: s.occupancy, capacity: s.capacity };
    }
    const instances = {};
    for (const [id, inst] of Object.entries(view.instances)) {
        instances[id] = { phase: inst.phase, routing_id: inst.routing_id };
    }
    const routings = Object.keys(view.routings).sort();
    return { workers, workstations, instances, routings, completed: view.completedCount };
}
