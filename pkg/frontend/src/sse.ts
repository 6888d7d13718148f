/**
 * Server-sent-events reader over fetch + ReadableStream.
 *
 * Works in browsers and in Node 20+ (no EventSource dependency). Frames are
 * split on blank lines; comment lines (leading ':') are ignored.
 */

export interface SseFrame {
  id?: string;
  event?: string;
  data: string;
}

export async function readSse(
  url: string,
  onFrame: (frame: SseFrame) => void,
  signal?: AbortSignal,
): Promise<void> {
  const response = await fetch(url, {
    headers: { accept: "text/event-stream" },
    signal,
  });
  if (!response.ok) {
    const text = await response.text().catch(() => "");
    throw new Error(`HTTP ${response.status}: ${text}`);
  }
  const reader = response.body?.getReader();
  if (!reader) throw new Error("response has no body to stream");

  const decoder = new TextDecoder();
  let buffer = "";
  while (true) {
    const { value, done } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    const parts = buffer.split("\n\n");
    buffer = parts.pop() ?? "";
    for (const part of parts) {
      const frame = parseFrame(part);
      if (frame) onFrame(frame);
    }
  }
  const tail = parseFrame(buffer);
  if (tail) onFrame(tail);
}

function parseFrame(block: string): SseFrame | null {
  const frame: SseFrame = { data: "" };
  const dataLines: string[] = [];
  for (const line of block.split("\n")) {
    if (!line || line.startsWith(":")) continue;
    const colon = line.indexOf(":");
    if (colon === -1) continue;
    const field = line.slice(0, colon);
    const value = line.slice(colon + 1).replace(/^ /, "");
    if (field === "data") dataLines.push(value);
    else if (field === "event") frame.event = value;
    else if (field === "id") frame.id = value;
  }
  if (dataLines.length === 0) return null;
  frame.data = dataLines.join("\n");
  return frame;
}
