// Shape the backend report into display rows; numbers are rendered exactly
// as the backend computed them (one decimal place only at display time).

import { GroupedReport, SessionReport } from "./api.js";

export interface DisplayRow {
  group: string;
  tp: number;
  tn: number;
  fp: number;
  fn: number;
  sensitivity: number | null;
  specificity: number | null;
  accuracy: number | null;
  unanswered: number;
}

export function reportRows(report: GroupedReport): DisplayRow[] {
  return Object.keys(report.rows)
    .sort()
    .map((group) => {
      const row = report.rows[group];
      return {
        group,
        tp: row.counts.tp,
        tn: row.counts.tn,
        fp: row.counts.fp,
        fn: row.counts.fn,
        sensitivity: row.sensitivity,
        specificity: row.specificity,
        accuracy: row.accuracy,
        unanswered: row.unanswered,
      };
    });
}

export function sessionReportRows(report: SessionReport): DisplayRow[] {
  return [...reportRows(report.total), ...reportRows(report.by_type)];
}

export function formatMetric(value: number | null): string {
  return value === null ? "n/a" : value.toFixed(1);
}
