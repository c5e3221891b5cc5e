// Keyboard-to-action mapping; the wire carries only integer action codes.
// Arrows move, O opens, P picks, L places (shown on screen in the studio).

export const ACTION_NAMES = [
  "move up",
  "move down",
  "move left",
  "move right",
  "pick",
  "place",
  "open",
] as const;

const KEY_TO_ACTION: Record<string, number> = {
  ArrowUp: 0,
  ArrowDown: 1,
  ArrowLeft: 2,
  ArrowRight: 3,
  p: 4,
  P: 4,
  l: 5,
  L: 5,
  o: 6,
  O: 6,
};

export function actionForKey(key: string): number | null {
  return key in KEY_TO_ACTION ? KEY_TO_ACTION[key] : null;
}
