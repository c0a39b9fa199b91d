// Wire shapes of the fleet-manager JSON API and event stream.
export {};
