// Pure text diff used by the side-by-side rule view. No DOM here so the
// whole module is testable in node.

export type DiffSpan = {
  text: string;
  changed: boolean;
};

export type DiffRowKind = "same" | "changed" | "added" | "removed";

export type DiffRow = {
  kind: DiffRowKind;
  leftNo: number | null;
  rightNo: number | null;
  left: DiffSpan[];
  right: DiffSpan[];
};

// Longest common subsequence as a pair of index lists into a and b.
const lcsPairs = (a: string[], b: string[]): Array<[number, number]> => {
  const n = a.length;
  const m = b.length;
  const table = new Uint32Array((n + 1) * (m + 1));
  const at = (i: number, j: number): number => table[i * (m + 1) + j] ?? 0;
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      table[i * (m + 1) + j] =
        a[i] === b[j] ? at(i + 1, j + 1) + 1 : Math.max(at(i + 1, j), at(i, j + 1));
    }
  }
  const pairs: Array<[number, number]> = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (a[i] === b[j]) {
      pairs.push([i, j]);
      i++;
      j++;
    } else if (at(i + 1, j) >= at(i, j + 1)) {
      i++;
    } else {
      j++;
    }
  }
  return pairs;
};

const mergeSpans = (spans: DiffSpan[]): DiffSpan[] => {
  const merged: DiffSpan[] = [];
  for (const span of spans) {
    const last = merged[merged.length - 1];
    if (last && last.changed === span.changed) {
      last.text += span.text;
    } else {
      merged.push({ ...span });
    }
  }
  return merged.filter((span) => span.text !== "");
};

const splitWords = (line: string): string[] => line.split(/(\s+)/).filter((w) => w !== "");

// Word-level spans for a pair of lines that differ: tokens on the common
// subsequence stay plain, everything else is highlighted.
export const buildWordSpans = (
  left: string,
  right: string,
): { left: DiffSpan[]; right: DiffSpan[] } => {
  const leftWords = splitWords(left);
  const rightWords = splitWords(right);
  const common = lcsPairs(leftWords, rightWords);
  const leftCommon = new Set(common.map(([i]) => i));
  const rightCommon = new Set(common.map(([, j]) => j));
  return {
    left: mergeSpans(leftWords.map((text, i) => ({ text, changed: !leftCommon.has(i) }))),
    right: mergeSpans(rightWords.map((text, j) => ({ text, changed: !rightCommon.has(j) }))),
  };
};

const plain = (text: string): DiffSpan[] => (text === "" ? [] : [{ text, changed: false }]);

const whole = (text: string): DiffSpan[] => (text === "" ? [] : [{ text, changed: true }]);

// Pairs up removed/added runs between common lines so edits show as one
// "changed" row instead of a delete plus an insert.
const emitGap = (
  rows: DiffRow[],
  leftLines: string[],
  rightLines: string[],
  leftStart: number,
  leftEnd: number,
  rightStart: number,
  rightEnd: number,
): void => {
  const leftCount = leftEnd - leftStart;
  const rightCount = rightEnd - rightStart;
  const paired = Math.min(leftCount, rightCount);
  for (let d = 0; d < paired; d++) {
    const left = leftLines[leftStart + d] ?? "";
    const right = rightLines[rightStart + d] ?? "";
    const spans = buildWordSpans(left, right);
    rows.push({
      kind: "changed",
      leftNo: leftStart + d + 1,
      rightNo: rightStart + d + 1,
      left: spans.left,
      right: spans.right,
    });
  }
  for (let d = paired; d < leftCount; d++) {
    rows.push({
      kind: "removed",
      leftNo: leftStart + d + 1,
      rightNo: null,
      left: whole(leftLines[leftStart + d] ?? ""),
      right: [],
    });
  }
  for (let d = paired; d < rightCount; d++) {
    rows.push({
      kind: "added",
      leftNo: null,
      rightNo: rightStart + d + 1,
      left: [],
      right: whole(rightLines[rightStart + d] ?? ""),
    });
  }
};

export const buildLineDiff = (leftText: string, rightText: string, limit = 2000): DiffRow[] => {
  const leftLines = leftText.split("\n").slice(0, limit);
  const rightLines = rightText.split("\n").slice(0, limit);
  const common = lcsPairs(leftLines, rightLines);
  const rows: DiffRow[] = [];
  let li = 0;
  let ri = 0;
  for (const [ci, cj] of common) {
    emitGap(rows, leftLines, rightLines, li, ci, ri, cj);
    rows.push({
      kind: "same",
      leftNo: ci + 1,
      rightNo: cj + 1,
      left: plain(leftLines[ci] ?? ""),
      right: plain(rightLines[cj] ?? ""),
    });
    li = ci + 1;
    ri = cj + 1;
  }
  emitGap(rows, leftLines, rightLines, li, leftLines.length, ri, rightLines.length);
  return rows;
};
