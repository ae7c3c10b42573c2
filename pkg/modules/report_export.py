"""
Report writers: JSON documents, flat CSV mirrors and formatted XLSX workbooks
"""
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from openpyxl.styles import Alignment, Font, PatternFill

from .config import APP_NAME, APP_VERSION, OUTPUT_FILES

logger = logging.getLogger(__name__)

HEADER_FONT = Font(bold=True, color="FFFFFF", size=12)
HEADER_FILL = PatternFill(start_color="1F4E79", end_color="1F4E79", fill_type="solid")
GOOD_FILL = PatternFill(start_color="E2EFDA", end_color="E2EFDA", fill_type="solid")


class ReportExporter:
    """
    Writes evaluation reports and multi-seed summaries into one output directory
    """

    def __init__(self, out_dir: Path):
        """
        Arguments:
            out_dir: directory for the report files (created if missing)
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def save_json(self, document: dict, filename: str = OUTPUT_FILES["report"]) -> Path:
        path = self.out_dir / filename
        try:
            path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Error saving {path}: {e}")
            raise
        logger.info(f"Report saved: {path}")
        return path

    def save_csv(self, frame: pd.DataFrame, filename: str = OUTPUT_FILES["report_csv"]) -> Path:
        path = self.out_dir / filename
        try:
            frame.to_csv(path, index=False, lineterminator="\n")
        except OSError as e:
            logger.error(f"Error saving {path}: {e}")
            raise
        logger.info(f"CSV mirror saved: {path}")
        return path

    def save_xlsx(self, sheets: Dict[str, pd.DataFrame], filename: str = OUTPUT_FILES["report_xlsx"],
                  summary: Optional[Dict[str, object]] = None) -> Path:
        """
        Save one sheet per frame with a formatted header row, plus an optional summary sheet
        Arguments:
            sheets: sheet name -> frame
            filename: workbook name inside out_dir
            summary: key -> value pairs for the "Summary" sheet
        Returns:
            Path to the saved workbook
        """
        if not sheets or all(frame.empty for frame in sheets.values()):
            raise ValueError("Nothing to export, every sheet is empty")

        path = self.out_dir / filename
        try:
            with pd.ExcelWriter(path, engine="openpyxl") as writer:
                for name, frame in sheets.items():
                    frame.to_excel(writer, sheet_name=name, index=False)
                    self._format_sheet(writer.sheets[name], frame)
                if summary is not None:
                    self._create_summary_sheet(writer.book, summary)
        except OSError as e:
            logger.error(f"Error saving {path}: {e}")
            raise
        logger.info(f"Workbook saved: {path}")
        return path

    def _format_sheet(self, worksheet, frame: pd.DataFrame):
        for cell in worksheet[1]:
            cell.font = HEADER_FONT
            cell.fill = HEADER_FILL
            cell.alignment = Alignment(horizontal="center", vertical="center")

        for column in worksheet.columns:
            width = max(len(str(cell.value)) if cell.value is not None else 0 for cell in column)
            worksheet.column_dimensions[column[0].column_letter].width = min(width + 2, 40)

        # metric values with 4 decimals, MRR cells highlighted
        names = list(frame.columns)
        metric_col = names.index("metric") if "metric" in names else None
        for row in worksheet.iter_rows(min_row=2):
            long_mrr = metric_col is not None and row[metric_col].value == "mrr"
            for cell, name in zip(row, names):
                if isinstance(cell.value, float):
                    cell.number_format = "0.0000"
                if name == "mrr" or (name in ("value", "mean") and long_mrr):
                    cell.fill = GOOD_FILL

    def _create_summary_sheet(self, workbook, summary: Dict[str, object]):
        sheet = workbook.create_sheet(title="Summary")
        sheet["A1"] = f"{APP_NAME} {APP_VERSION} report"
        sheet["A1"].font = Font(bold=True, size=16, color="1F4E79")

        stats = dict(summary)
        stats["Generated"] = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        row = 3
        for key, value in stats.items():
            sheet[f"A{row}"] = key
            sheet[f"B{row}"] = value if isinstance(value, (int, float)) else str(value)
            sheet[f"A{row}"].font = Font(bold=True)
            row += 1

        sheet.column_dimensions["A"].width = 25
        sheet.column_dimensions["B"].width = 30
