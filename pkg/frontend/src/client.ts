/**
 * Core client logic for the portal enhancement bundle.
 *
 * Everything here is DOM-free so it can run under plain node for tests:
 * SSE line parsing, the monotone event cursor, service-view extraction
 * from server-rendered pages, and form validation that mirrors the
 * server's required-field checks.
 */

export interface UpdateEvent {
  kind: "inserted" | "removed";
  service: string;
  id: string;
  ts: number;
}

/** Parse one SSE data payload into an update event, or null. */
export function parseUpdate(data: string): UpdateEvent | null {
  try {
    const parsed = JSON.parse(data);
    if (
      (parsed.kind === "inserted" || parsed.kind === "removed") &&
      typeof parsed.service === "string" &&
      typeof parsed.id === "string"
    ) {
      return parsed as UpdateEvent;
    }
  } catch {
    /* tolerate garbage: the stream may interleave keepalives */
  }
  return null;
}

/**
 * Incremental SSE frame decoder: feed raw chunks, get complete events.
 * Only `event:` and `data:` fields matter to this client.
 */
export class SseDecoder {
  private buffer = "";

  push(chunk: string): Array<{ event: string; data: string }> {
    this.buffer += chunk;
    const events: Array<{ event: string; data: string }> = [];
    let split;
    while ((split = this.buffer.indexOf("\n\n")) >= 0) {
      const block = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      let event = "message";
      const data: string[] = [];
      for (const line of block.split("\n")) {
        if (line.startsWith("event:")) event = line.slice(6).trim();
        else if (line.startsWith("data:")) data.push(line.slice(5).trim());
      }
      if (data.length > 0) events.push({ event, data: data.join("\n") });
    }
    return events;
  }
}

/** Keeps only events that advance time; duplicates and replays drop. */
export class EventCursor {
  private last = -1;
  private seen = new Set<string>();

  accept(event: UpdateEvent): boolean {
    if (event.ts < this.last) return false;
    const key = `${event.kind}:${event.id}`;
    if (this.seen.has(key)) return false;
    this.seen.add(key);
    this.last = event.ts;
    return true;
  }
}

/**
 * Pull the #service-view fragment out of a server-rendered page without
 * a DOM: counts div nesting from the marker element.
 */
export function extractServiceView(html: string): string | null {
  const marker = '<div id="service-view"';
  const start = html.indexOf(marker);
  if (start < 0) return null;
  const open = html.indexOf(">", start);
  if (open < 0) return null;
  let depth = 1;
  let pos = open + 1;
  const tag = /<\/?div\b/g;
  tag.lastIndex = pos;
  let match;
  while ((match = tag.exec(html)) !== null) {
    depth += match[0] === "</div" ? -1 : 1;
    if (depth === 0) return html.slice(open + 1, match.index);
  }
  return null;
}

export interface FieldState {
  name: string;
  required: boolean;
  value: string;
  kind: "text" | "textarea" | "file" | "hidden";
}

/** Mirror of the server's validation: required fields must be non-blank. */
export function validateFields(fields: FieldState[]): Record<string, string> {
  const errors: Record<string, string> = {};
  for (const field of fields) {
    if (!field.required) continue;
    if (field.kind === "file") {
      if (!field.value) errors[field.name] = "required";
    } else if (field.value.trim() === "") {
      errors[field.name] = "required";
    }
  }
  return errors;
}

export interface LiveServiceOptions {
  baseUrl: string;
  service: string;
  onHtml: (fragment: string) => void;
  onStatus?: (status: "live" | "reconnecting" | "offline") => void;
  fetchFn?: typeof fetch;
  reconnectBaseMs?: number;
}

/**
 * Watches /events and refreshes one service's summary region whenever a
 * message lands in it. Reconnects with exponential backoff; refreshes
 * once on every (re)connect so missed events cannot strand the view.
 */
export class LiveService {
  private cursor = new EventCursor();
  private stopped = false;
  private attempt = 0;

  constructor(private opts: LiveServiceOptions) {}

  private get fetchFn(): typeof fetch {
    return this.opts.fetchFn ?? fetch;
  }

  async refresh(): Promise<void> {
    const response = await this.fetchFn(
      `${this.opts.baseUrl}/services/${encodeURIComponent(this.opts.service)}`,
    );
    if (!response.ok) throw new Error(`service page: HTTP ${response.status}`);
    const fragment = extractServiceView(await response.text());
    if (fragment !== null) this.opts.onHtml(fragment);
  }

  stop(): void {
    this.stopped = true;
  }

  async run(): Promise<void> {
    while (!this.stopped) {
      try {
        const response = await this.fetchFn(`${this.opts.baseUrl}/events`);
        if (!response.ok || !response.body) throw new Error("no event stream");
        this.attempt = 0;
        this.opts.onStatus?.("live");
        await this.refresh();
        const reader = response.body.getReader();
        const decoder = new SseDecoder();
        const text = new TextDecoder();
        for (;;) {
          const { done, value } = await reader.read();
          if (done || this.stopped) break;
          for (const frame of decoder.push(text.decode(value, { stream: true }))) {
            if (frame.event !== "update") continue;
            const update = parseUpdate(frame.data);
            if (!update || !this.cursor.accept(update)) continue;
            if (update.service === this.opts.service) {
              await this.refresh();
            }
          }
        }
        if (this.stopped) return;
        throw new Error("stream ended");
      } catch {
        if (this.stopped) return;
        this.attempt += 1;
        this.opts.onStatus?.(this.attempt > 3 ? "offline" : "reconnecting");
        const base = this.opts.reconnectBaseMs ?? 500;
        const delay = Math.min(base * 2 ** Math.min(this.attempt, 6), 15000);
        await new Promise((resolve) => setTimeout(resolve, delay));
      }
    }
  }
}
