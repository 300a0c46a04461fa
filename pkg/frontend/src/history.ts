/** Undo stack of immutable snapshots; the bottom entry is the initial
 * state, so undoing all the way restores the untouched extraction. */

export class UndoHistory<T> {
  private stack: T[] = [];

  constructor(initial: T) {
    this.stack = [initial];
  }

  push(state: T): void {
    this.stack.push(state);
  }

  /** Drop the newest state and return the previous one (the initial
   * state is never popped). */
  undo(): T {
    if (this.stack.length > 1) {
      this.stack.pop();
    }
    return this.current();
  }

  current(): T {
    return this.stack[this.stack.length - 1];
  }

  canUndo(): boolean {
    return this.stack.length > 1;
  }

  depth(): number {
    return this.stack.length;
  }
}
