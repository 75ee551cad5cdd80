import { afterEach, beforeEach, describe, expect, it } from "vitest";
import type { Server } from "node:http";

import { ApiError, ConsoleApi } from "../src/api.js";
import { activeLabel, makeCase, startFixtureServer, type FixtureState } from "./fixture-server.js";

let server: Server;
let state: FixtureState;
let api: ConsoleApi;

beforeEach(async () => {
  const started = await startFixtureServer([
    makeCase("CHG-0001"),
    makeCase("CHG-0002", { status: "Analyzing" }),
    makeCase("CHG-0003", { admission: "admitted" }),
  ]);
  server = started.server;
  state = started.state;
  api = new ConsoleApi(started.baseUrl);
});

afterEach(() => {
  server.close();
});

describe("listCases", () => {
  it("returns every case", async () => {
    const rows = await api.listCases();
    expect(rows.map((r) => r.case_id)).toEqual(["CHG-0001", "CHG-0002", "CHG-0003"]);
  });

  it("passes the status filter through", async () => {
    const rows = await api.listCases("Analyzing");
    expect(rows.map((r) => r.case_id)).toEqual(["CHG-0002"]);
  });
});

describe("getReport", () => {
  it("returns the full view for a finished case", async () => {
    const result = await api.getReport("CHG-0001");
    expect(result.ready).toBe(true);
    if (result.ready) {
      expect(result.view.report.ecd_verdict).toBe(true);
      expect(result.view.cot_weights.RootCause).toBeCloseTo(0.3);
    }
  });

  it("reports pending status on 202", async () => {
    const result = await api.getReport("CHG-0002");
    expect(result).toEqual({ ready: false, status: "Analyzing" });
  });

  it("raises a typed error for unknown cases", async () => {
    await expect(api.getReport("NOPE")).rejects.toThrowError(ApiError);
    await expect(api.getReport("NOPE")).rejects.toMatchObject({ status: 404, code: "unknown_case" });
  });
});

describe("submitFeedback", () => {
  it("records a verdict through the endpoint", async () => {
    const ack = await api.submitFeedback("CHG-0001", "Good", "looks right", "key-1");
    expect(ack.active_label).toBe("Good");
    expect(ack.admission.state).toBe("admitted");
    expect(activeLabel(state, "CHG-0001")).toBe("Good");
  });

  it("replays identical idempotency keys", async () => {
    const first = await api.submitFeedback("CHG-0001", "Good", "", "key-dup");
    const second = await api.submitFeedback("CHG-0001", "Good", "", "key-dup");
    expect(second).toEqual(first);
    expect(state.labels.get("CHG-0001")).toHaveLength(1);
  });
});
