/**
 * WebSocket client for the render service with a latest-wins request policy:
 * at most one view request is in flight; while waiting for its frame, newer
 * requests overwrite each other and only the most recent is sent next.
 */

import {
  encodeViewRequest,
  parseErrorReply,
  parseFrameReply,
  type FrameReply,
  type ViewRequest,
} from "./protocol.js";

export type ViewParams = Omit<ViewRequest, "id">;

export interface ThrottleSink {
  send(req: ViewRequest): void;
}

/**
 * Latest-wins scheduler. `request` queues view parameters; only one request is
 * outstanding at a time and intermediate ones are dropped. Call `settle` when
 * a reply (frame or error) for the in-flight id arrives.
 */
export class LatestWinsThrottle {
  private nextId = 1;
  private inFlight: number | null = null;
  private pending: ViewParams | null = null;

  constructor(private sink: ThrottleSink) {}

  request(params: ViewParams): void {
    if (this.inFlight !== null) {
      this.pending = params;
      return;
    }
    this.dispatch(params);
  }

  settle(id: number): void {
    if (id !== this.inFlight) return; // stale reply
    this.inFlight = null;
    if (this.pending !== null) {
      const params = this.pending;
      this.pending = null;
      this.dispatch(params);
    }
  }

  /** Drop all in-flight/pending state (e.g. after a reconnect). */
  reset(): void {
    this.inFlight = null;
    this.pending = null;
  }

  get inFlightId(): number | null {
    return this.inFlight;
  }

  private dispatch(params: ViewParams): void {
    const id = this.nextId++;
    this.inFlight = id;
    this.sink.send({ id, ...params });
  }
}

export interface ViewerClientEvents {
  onFrame?: (frame: FrameReply) => void;
  onError?: (message: string) => void;
  onStatus?: (status: "connecting" | "open" | "closed") => void;
}

const RECONNECT_BASE_MS = 500;
const RECONNECT_MAX_MS = 8000;

/** WebSocket wrapper: connects, reconnects with backoff, throttles requests. */
export class ViewerClient {
  private ws: WebSocket | null = null;
  private throttle: LatestWinsThrottle;
  private reconnectDelay = RECONNECT_BASE_MS;
  private closed = false;

  constructor(
    private url: string,
    private events: ViewerClientEvents = {},
  ) {
    this.throttle = new LatestWinsThrottle({
      send: (req) => this.ws?.send(encodeViewRequest(req)),
    });
  }

  connect(): void {
    this.closed = false;
    this.events.onStatus?.("connecting");
    const ws = new WebSocket(this.url);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.reconnectDelay = RECONNECT_BASE_MS;
      this.events.onStatus?.("open");
    };
    ws.onmessage = (ev) => this.handleMessage(ev.data);
    ws.onclose = () => {
      this.throttle.reset();
      this.events.onStatus?.("closed");
      if (!this.closed) {
        setTimeout(() => this.connect(), this.reconnectDelay);
        this.reconnectDelay = Math.min(this.reconnectDelay * 2, RECONNECT_MAX_MS);
      }
    };
    this.ws = ws;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }

  requestView(params: ViewParams): void {
    if (this.ws?.readyState === WebSocket.OPEN) {
      this.throttle.request(params);
    }
  }

  private handleMessage(data: ArrayBuffer | string): void {
    if (typeof data === "string") {
      const err = parseErrorReply(data);
      if (err) {
        if (err.id !== null) this.throttle.settle(err.id);
        this.events.onError?.(err.error);
      }
      return;
    }
    let frame: FrameReply;
    try {
      frame = parseFrameReply(data);
    } catch (e) {
      this.events.onError?.(String(e));
      return;
    }
    this.throttle.settle(frame.id);
    this.events.onFrame?.(frame);
  }
}
