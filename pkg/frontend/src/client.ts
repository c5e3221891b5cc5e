// Thin WebSocket plumbing: JSON in, JSON out, reconnect left to the user.

import { ServerMessage } from "./protocol.js";

export type MessageHandler = (msg: ServerMessage) => void;

export class GatewayClient {
  private ws: WebSocket;
  ready: Promise<void>;

  constructor(url: string, private onMessage: MessageHandler,
              private onClose: () => void) {
    this.ws = new WebSocket(url);
    this.ready = new Promise((resolve, reject) => {
      this.ws.onopen = () => resolve();
      this.ws.onerror = () => reject(new Error("gateway connection failed"));
    });
    this.ws.onmessage = (ev: MessageEvent) => {
      this.onMessage(JSON.parse(ev.data as string) as ServerMessage);
    };
    this.ws.onclose = () => this.onClose();
  }

  send(msg: Record<string, unknown>): void {
    this.ws.send(JSON.stringify(msg));
  }
}
