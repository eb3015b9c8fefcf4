// Bearer token holder. The token is entered once and kept in session
// storage so a tab survives reloads without re-prompting, but nothing
// outlives the browser session.

export interface KeyValueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const KEY = "rulegenie.token";

export class TokenStore {
  constructor(private readonly storage: KeyValueStorage) {}

  get(): string | null {
    const value = this.storage.getItem(KEY);
    return value && value.length > 0 ? value : null;
  }

  set(token: string): void {
    this.storage.setItem(KEY, token);
  }

  clear(): void {
    this.storage.removeItem(KEY);
  }
}

/** In-memory stand-in for tests and non-browser callers. */
export class MemoryStorage implements KeyValueStorage {
  private readonly map = new Map<string, string>();

  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }

  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }
}
