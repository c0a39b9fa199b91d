// Thin fetch wrappers over the documented JSON API.
async function getJson(url) {
    const response = await fetch(url);
    if (!response.ok) {
        throw new Error(`GET ${url} -> ${response.status}`);
    }
    return response.json();
}
export async function postJson(url, body) {
    const response = await fetch(url, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
    });
    const data = await response.json().catch(() => ({}));
    if (!response.ok) {
        const detail = data.error ?? `HTTP ${response.status}`;
        throw new Error(detail);
    }
    return data;
}
export async function fetchSnapshot(base) {
    const [workers, workstations, routings, instances, jobs] = await Promise.all([
        getJson(`${base}/api/workers`),
        getJson(`${base}/api/workstations`),
        getJson(`${base}/api/routings`),
        getJson(`${base}/api/instances`),
        getJson(`${base}/api/jobs`),
    ]);
    return { workers, workstations, routings, instances, jobs };
}
export function activateRouting(base, routingId, quantity) {
    return postJson(`${base}/api/routings/${routingId}/activate`, { quantity });
}
export function cancelInstance(base, instanceId) {
    return postJson(`${base}/api/instances/${instanceId}/cancel`, {});
}
export function setStationState(base, stationId, state) {
    return postJson(`${base}/api/workstations/${stationId}/state`, { state });
}
