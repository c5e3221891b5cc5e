// Canvas grid renderer. Pure drawing from the view model; no simulation.

import { RenderState } from "./protocol.js";

const DOOR_FILL: Record<string, string> = {
  red: "#d64545",
  green: "#3e9c4f",
  blue: "#3f6fd6",
  yellow: "#d6b93f",
  purple: "#8e4fd6",
  orange: "#d6813f",
};

export function drawGrid(ctx: CanvasRenderingContext2D, state: RenderState): void {
  const { width, height, cells, agent, doors } = state;
  const cell = Math.floor(
    Math.min(ctx.canvas.width / width, ctx.canvas.height / height),
  );
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);

  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      ctx.fillStyle = cells[y][x] === 1 ? "#555" : "#f4f1ea";
      ctx.fillRect(x * cell, y * cell, cell - 1, cell - 1);
    }
  }
  for (const door of doors) {
    const [x, y] = door.pos;
    ctx.fillStyle = DOOR_FILL[door.color] ?? "#999";
    ctx.fillRect(x * cell, y * cell, cell - 1, cell - 1);
    if (door.open) {
      // open door: hollow frame
      ctx.fillStyle = "#f4f1ea";
      const m = Math.max(2, Math.floor(cell / 4));
      ctx.fillRect(x * cell + m, y * cell + m, cell - 1 - 2 * m, cell - 1 - 2 * m);
    }
  }
  const [ax, ay] = agent;
  ctx.fillStyle = "#222";
  ctx.beginPath();
  ctx.arc(ax * cell + cell / 2, ay * cell + cell / 2, cell * 0.32, 0, 2 * Math.PI);
  ctx.fill();
}
