// Thin fetch wrappers over the documented JSON API.

import type { Snapshot } from "./types.js";

async function getJson(url: string): Promise<any> {
  const response = await fetch(url);
  if (!response.ok) {
    throw new Error(`GET ${url} -> ${response.status}`);
  }
  return response.json();
}

export async function postJson(url: string, body: unknown): Promise<any> {
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

export async function fetchSnapshot(base: string): Promise<Snapshot> {
  const [workers, workstations, routings, instances, jobs] = await Promise.all([
    getJson(`${base}/api/workers`),
    getJson(`${base}/api/workstations`),
    getJson(`${base}/api/routings`),
    getJson(`${base}/api/instances`),
    getJson(`${base}/api/jobs`),
  ]);
  return { workers, workstations, routings, instances, jobs };
}

export function activateRouting(base: string, routingId: string, quantity: number) {
  return postJson(`${base}/api/routings/${routingId}/activate`, { quantity });
}

export function cancelInstance(base: string, instanceId: string) {
  return postJson(`${base}/api/instances/${instanceId}/cancel`, {});
}

export function setStationState(base: string, stationId: string, state: "down" | "free") {
  return postJson(`${base}/api/workstations/${stationId}/state`, { state });
}
