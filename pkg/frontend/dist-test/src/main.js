// Dashboard entry point: one snapshot load, then fold the event stream into
// the view and re-render. All mutations go through the server; the view only
// changes when the confirming events come back on the stream.
import { activateRouting, cancelInstance, fetchSnapshot, setStationState } from "./api.js";
import { applyEvent, emptyView, viewFromSnapshot, } from "./projection.js";
import { connectEvents } from "./sse.js";
const base = window.location.origin;
let view = emptyView();
let renderQueued = false;
function scheduleRender() {
    if (renderQueued)
        return;
    renderQueued = true;
    requestAnimationFrame(() => {
        renderQueued = false;
        render();
    });
}
function el(id) {
    return document.getElementById(id);
}
function showError(message) {
    const banner = el("error-banner");
    banner.textContent = message;
    banner.classList.remove("hidden");
    setTimeout(() => banner.classList.add("hidden"), 6000);
}
function batteryGauge(fraction) {
    const pct = Math.round(fraction * 100);
    const level = pct <= 20 ? "low" : pct <= 50 ? "mid" : "high";
    return `<span class="gauge ${level}"><span style="width:${pct}%"></span></span> ${pct}%`;
}
function renderWorkers() {
    const rows = Object.values(view.workers)
        .sort((a, b) => a.name.localeCompare(b.name))
        .map((w) => `
      <tr>
        <td><span class="dot ${w.status}"></span>${w.name}</td>
        <td><span class="badge ${w.status}">${w.status}</span></td>
        <td>${batteryGauge(w.battery)}</td>
        <td>${w.current_job ?? "-"}</td>
      </tr>`);
    return rows.join("") || `<tr><td colspan="4" class="empty">no workers</td></tr>`;
}
function renderStations() {
    const rows = Object.values(view.workstations)
        .sort((a, b) => a.name.localeCompare(b.name))
        .map((s) => {
        const toggle = s.state === "down"
            ? `<button data-station-up="${s.id}">bring up</button>`
            : `<button data-station-down="${s.id}">mark down</button>`;
        return `
      <tr>
        <td>${s.name}</td>
        <td>${s.station_type}</td>
        <td>${s.occupancy}/${s.capacity}</td>
        <td><span class="badge ${s.state}">${s.state}</span></td>
        <td>${toggle}</td>
      </tr>`;
    });
    return rows.join("") || `<tr><td colspan="5" class="empty">no workstations</td></tr>`;
}
function renderRoutings() {
    const rows = Object.values(view.routings)
        .sort((a, b) => a.id.localeCompare(b.id))
        .map((r) => `
      <tr>
        <td>${r.id}</td>
        <td>${r.part_number}</td>
        <td>${r.steps}</td>
        <td>
          <input type="number" min="1" value="1" id="qty-${r.id}" class="qty" />
          <button data-activate="${r.id}">activate</button>
          ${r.pending > 0 ? `<span class="pending">activating x${r.pending}...</span>` : ""}
        </td>
      </tr>`);
    return rows.join("") || `<tr><td colspan="4" class="empty">no routings</td></tr>`;
}
function renderInstances() {
    const rows = Object.values(view.instances)
        .sort((a, b) => a.id.localeCompare(b.id))
        .map((inst) => {
        const cancel = inst.phase === "completed"
            ? ""
            : `<button data-cancel="${inst.id}">cancel</button>`;
        return `
      <tr>
        <td>${inst.id}</td>
        <td>${inst.routing_id}</td>
        <td>step ${inst.current_step}</td>
        <td><span class="badge ${inst.phase}">${inst.phase}</span></td>
        <td>${cancel}</td>
      </tr>`;
    });
    return rows.join("") || `<tr><td colspan="5" class="empty">no production orders</td></tr>`;
}
function renderFeed() {
    return view.eventFeed
        .slice(-40)
        .reverse()
        .map((entry) => `<li><span class="seq">#${entry.seq}</span> <span class="kind">${entry.kind}</span> ${entry.summary}</li>`)
        .join("");
}
function render() {
    el("workers-body").innerHTML = renderWorkers();
    el("stations-body").innerHTML = renderStations();
    el("routings-body").innerHTML = renderRoutings();
    el("instances-body").innerHTML = renderInstances();
    el("event-feed").innerHTML = renderFeed();
    el("completed-count").textContent = String(view.completedCount);
    const conn = el("connection");
    conn.textContent = view.connection.connected
        ? `live (seq ${view.connection.last_seq})`
        : "reconnecting...";
    conn.className = view.connection.connected ? "conn ok" : "conn lost";
}
function wireActions() {
    document.body.addEventListener("click", (raw) => {
        const target = raw.target;
        const activate = target.getAttribute("data-activate");
        if (activate) {
            const qty = parseInt(el(`qty-${activate}`).value, 10);
            if (!Number.isInteger(qty) || qty < 1) {
                showError("quantity must be at least 1");
                return;
            }
            const routing = view.routings[activate];
            if (routing)
                routing.pending += qty; // optimistic; cleared by the event
            scheduleRender();
            activateRouting(base, activate, qty).catch((err) => {
                if (routing)
                    routing.pending = Math.max(0, routing.pending - qty);
                showError(`activate failed: ${err.message}`);
                scheduleRender();
            });
        }
        const cancel = target.getAttribute("data-cancel");
        if (cancel) {
            cancelInstance(base, cancel).catch((err) => showError(`cancel failed: ${err.message}`));
        }
        const down = target.getAttribute("data-station-down");
        if (down) {
            setStationState(base, down, "down").catch((err) => showError(err.message));
        }
        const up = target.getAttribute("data-station-up");
        if (up) {
            setStationState(base, up, "free").catch((err) => showError(err.message));
        }
    });
}
async function start() {
    wireActions();
    const snapshot = await fetchSnapshot(base);
    view = viewFromSnapshot(snapshot);
    render();
    connectEvents({
        base,
        since: 0,
        onEvent(event) {
            applyEvent(view, event);
            scheduleRender();
        },
        onStatus(connected) {
            view.connection.connected = connected;
            scheduleRender();
        },
    });
}
start().catch((err) => showError(`failed to start: ${err.message ?? err}`));
