// Server-sent events client on the fetch streaming API, so the same code
// runs in the browser and under node for tests. Resumes from the last seen
// seq after a dropped connection.
export function connectEvents(options) {
    let nextSeq = options.since;
    let closed = false;
    let controller = null;
    const retryDelay = options.retryDelayMs ?? 1000;
    async function readStream() {
        controller = new AbortController();
        const response = await fetch(`${options.base}/api/events?since=${nextSeq}`, {
            signal: controller.signal,
            headers: { Accept: "text/event-stream" },
        });
        if (!response.ok || !response.body) {
            throw new Error(`event stream refused: ${response.status}`);
        }
        options.onStatus?.(true);
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        let buffer = "";
        for (;;) {
            const { done, value } = await reader.read();
            if (done)
                break;
            buffer += decoder.decode(value, { stream: true });
            let boundary;
            while ((boundary = buffer.indexOf("\n\n")) >= 0) {
                const frame = buffer.slice(0, boundary);
                buffer = buffer.slice(boundary + 2);
                handleFrame(frame);
            }
        }
    }
    function handleFrame(frame) {
        let data = "";
        for (const line of frame.split("\n")) {
            if (line.startsWith("data:")) {
                data += line.slice(5).trim();
            }
            // comment lines (heartbeats) and id: lines need no handling; the seq
            // rides inside the JSON payload.
        }
        if (!data)
            return;
        const event = JSON.parse(data);
        if (event.seq >= nextSeq) {
            nextSeq = event.seq + 1;
            options.onEvent(event);
        }
    }
    async function loop() {
        while (!closed) {
            try {
                await readStream();
            }
            catch (err) {
                if (closed)
                    return;
            }
            options.onStatus?.(false);
            if (closed)
                return;
            await new Promise((resolve) => setTimeout(resolve, retryDelay));
        }
    }
    void loop();
    return {
        close() {
            closed = true;
            controller?.abort();
        },
    };
}
