import { describe, expect, it } from "vitest";
import { MemoryStorage, TokenStore } from "../src/token.js";

describe("TokenStore", () => {
  it("round-trips a token", () => {
    const store = new TokenStore(new MemoryStorage());
    expect(store.get()).toBeNull();
    store.set("sssh");
    expect(store.get()).toBe("sssh");
  });

  it("treats an empty entry as no token", () => {
    const store = new TokenStore(new MemoryStorage());
    store.set("");
    expect(store.get()).toBeNull();
  });

  it("clears", () => {
    const store = new TokenStore(new MemoryStorage());
    store.set("sssh");
    store.clear();
    expect(store.get()).toBeNull();
  });
});
