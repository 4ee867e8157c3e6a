from __future__ import annotations

import logging
from pathlib import Path

from PySide6.QtCore import QObject, Qt, Signal
from PySide6.QtGui import QFont
from PySide6.QtWidgets import (
    QMainWindow,
    QWidget,
    QVBoxLayout,
    QHBoxLayout,
    QLabel,
    QLineEdit,
    QPushButton,
    QFileDialog,
    QTableWidget,
    QTableWidgetItem,
    QTextEdit,
    QHeaderView,
    QCheckBox,
    QMessageBox,
    QSpinBox,
)

from tsae_tool import TOOL_NAME
from tsae_tool.core.adversarial import generate_batch
from tsae_tool.core.batch import batch_evaluate
from tsae_tool.core.checkpoint import load_checkpoint
from tsae_tool.core.datapipe import denormalize, load_dataset_dir, write_csv_series
from tsae_tool.core.evaluation import DEFAULT_GENERATED, build_report
from tsae_tool.core.reporting import metric_rows, write_generation_manifest, write_metrics_report
from tsae_tool.errors import TsaeError
from tsae_tool.models import LEVEL_ORDER, Level, MetricRow, MetricsReport


class _LogBridge(QObject):
    message = Signal(str)


class QtLogHandler(logging.Handler):
    """Forwards log records to the window's log pane (thread-safe through a queued signal)."""

    def __init__(self, sink):
        super().__init__(level=logging.INFO)
        self.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        self._bridge = _LogBridge()
        self._bridge.message.connect(sink)

    def emit(self, record: logging.LogRecord) -> None:
        try:
            self._bridge.message.emit(self.format(record))
        except RuntimeError:
            # window already destroyed
            pass


def _level_rank(r: MetricRow) -> int:
    # sorted() is stable, so metric order survives within a level
    if r.level in Level._value2member_map_:
        return LEVEL_ORDER[Level(r.level)]
    return LEVEL_ORDER[Level.INFO]


class MainWindow(QMainWindow):
    def __init__(self):
        super().__init__()
        self.setWindowTitle(TOOL_NAME)
        self.resize(1050, 720)

        self._last_rows: list[MetricRow] = []
        self._last_report: MetricsReport | None = None
        self._last_checkpoint: str = ""
        self._last_dataset: str = ""

        self._build_ui()
        self._wire_signals()

        self._log_handler = QtLogHandler(self._log)
        logging.getLogger("tsae_tool").addHandler(self._log_handler)

    def closeEvent(self, event):
        logging.getLogger("tsae_tool").removeHandler(self._log_handler)
        super().closeEvent(event)

    def _build_ui(self):
        root = QWidget()
        self.setCentralWidget(root)

        layout = QVBoxLayout(root)
        layout.setSpacing(10)

        # ---------- File pickers ----------
        picker_row = QHBoxLayout()

        self.le_checkpoint = QLineEdit()
        self.le_checkpoint.setPlaceholderText("Select a .tsae checkpoint...")
        self.btn_browse_ckpt = QPushButton("Browse Checkpoint...")

        self.le_dataset_dir = QLineEdit()
        self.le_dataset_dir.setPlaceholderText("Dataset folder (*_TRAIN.ts / *_TEST.ts)...")
        self.btn_browse_data = QPushButton("Browse Data...")

        self.le_output_dir = QLineEdit()
        self.le_output_dir.setPlaceholderText("Select an output folder...")
        self.btn_browse_out = QPushButton("Browse Output...")

        picker_row.addWidget(QLabel("Checkpoint:"))
        picker_row.addWidget(self.le_checkpoint, 3)
        picker_row.addWidget(self.btn_browse_ckpt)
        picker_row.addSpacing(12)
        picker_row.addWidget(QLabel("Data:"))
        picker_row.addWidget(self.le_dataset_dir, 2)
        picker_row.addWidget(self.btn_browse_data)
        layout.addLayout(picker_row)

        out_row = QHBoxLayout()
        out_row.addWidget(QLabel("Output:"))
        out_row.addWidget(self.le_output_dir, 3)
        out_row.addWidget(self.btn_browse_out)
        layout.addLayout(out_row)

        # ---------- Options row ----------
        options_row = QHBoxLayout()
        self.sb_count = QSpinBox()
        self.sb_count.setRange(1, 10000)
        self.sb_count.setValue(DEFAULT_GENERATED)
        self.sb_seed = QSpinBox()
        self.sb_seed.setRange(0, 2**31 - 1)
        self.cb_denormalized = QCheckBox("Also write denormalized CSVs")
        self.cb_denormalized.setChecked(True)
        self.cb_batch_mode = QCheckBox("Batch mode (checkpoint path is a folder)")
        options_row.addWidget(QLabel("Series:"))
        options_row.addWidget(self.sb_count)
        options_row.addWidget(QLabel("Seed:"))
        options_row.addWidget(self.sb_seed)
        options_row.addWidget(self.cb_denormalized)
        options_row.addWidget(self.cb_batch_mode)
        options_row.addStretch(1)
        layout.addLayout(options_row)

        # ---------- Severity filters ----------
        filters_row = QHBoxLayout()
        self.cb_show_errors = QCheckBox("Errors")
        self.cb_show_warnings = QCheckBox("Warnings")
        self.cb_show_info = QCheckBox("Info")
        self.cb_show_errors.setChecked(True)
        self.cb_show_warnings.setChecked(True)
        self.cb_show_info.setChecked(True)
        self.lbl_counts = QLabel("Errors: 0 | Warnings: 0 | Info: 0")
        filters_row.addWidget(self.cb_show_errors)
        filters_row.addWidget(self.cb_show_warnings)
        filters_row.addWidget(self.cb_show_info)
        filters_row.addStretch(1)
        filters_row.addWidget(self.lbl_counts)
        layout.addLayout(filters_row)

        # ---------- Buttons ----------
        btn_row = QHBoxLayout()
        self.btn_generate = QPushButton("Generate")
        self.btn_evaluate = QPushButton("Evaluate")
        self.btn_export = QPushButton("Export Report")
        btn_row.addWidget(self.btn_generate)
        btn_row.addWidget(self.btn_evaluate)
        btn_row.addWidget(self.btn_export)
        btn_row.addStretch(1)
        layout.addLayout(btn_row)

        # ---------- Metrics table ----------
        self.table = QTableWidget(0, 5)
        self.table.setHorizontalHeaderLabels(["Level", "Metric", "Value", "Reference", "Note"])
        header = self.table.horizontalHeader()
        for col in range(4):
            header.setSectionResizeMode(col, QHeaderView.ResizeToContents)
        header.setSectionResizeMode(4, QHeaderView.Stretch)
        self.table.setAlternatingRowColors(True)
        layout.addWidget(self.table, 4)

        # ---------- Log output ----------
        layout.addWidget(QLabel("Log:"))
        self.log = QTextEdit()
        self.log.setReadOnly(True)
        self.log.setFont(QFont("Consolas", 10))
        layout.addWidget(self.log, 2)

        self._refresh_table_from_last()

    def _wire_signals(self):
        self.btn_browse_ckpt.clicked.connect(self._pick_checkpoint)
        self.btn_browse_data.clicked.connect(self._pick_dataset_folder)
        self.btn_browse_out.clicked.connect(self._pick_output_folder)

        self.btn_generate.clicked.connect(self._on_generate)
        self.btn_evaluate.clicked.connect(self._on_evaluate)
        self.btn_export.clicked.connect(self._on_export)

        self.cb_show_errors.stateChanged.connect(self._refresh_table_from_last)
        self.cb_show_warnings.stateChanged.connect(self._refresh_table_from_last)
        self.cb_show_info.stateChanged.connect(self._refresh_table_from_last)

    # ---------- UI helpers ----------
    def _pick_checkpoint(self):
        if self.cb_batch_mode.isChecked():
            folder = QFileDialog.getExistingDirectory(self, "Select Checkpoint Folder", "")
            if folder:
                self.le_checkpoint.setText(folder)
            return
        path, _ = QFileDialog.getOpenFileName(self, "Select Checkpoint", "", "Checkpoints (*.tsae);;All Files (*.*)")
        if path:
            self.le_checkpoint.setText(path)

    def _pick_dataset_folder(self):
        folder = QFileDialog.getExistingDirectory(self, "Select Dataset Folder", "")
        if folder:
            self.le_dataset_dir.setText(folder)

    def _pick_output_folder(self):
        folder = QFileDialog.getExistingDirectory(self, "Select Output Folder", "")
        if folder:
            self.le_output_dir.setText(folder)

    def _log(self, msg: str):
        self.log.append(msg)

    def _add_row(self, r: MetricRow):
        row = self.table.rowCount()
        self.table.insertRow(row)
        items = [QTableWidgetItem(x) for x in (r.level, r.metric, r.value, r.reference, r.note)]
        for it in items:
            it.setFlags(it.flags() & ~Qt.ItemIsEditable)

        lvl = r.level.upper()
        if lvl == "ERROR":
            items[0].setForeground(Qt.red)
        elif lvl == "WARNING":
            items[0].setForeground(Qt.darkYellow)
        else:
            items[0].setForeground(Qt.darkGreen)

        for col, it in enumerate(items):
            self.table.setItem(row, col, it)

    def _checkpoint_path(self) -> Path | None:
        text = self.le_checkpoint.text().strip()
        path = Path(text) if text else None
        batch_mode = self.cb_batch_mode.isChecked()
        if path is None or not path.exists():
            QMessageBox.warning(self, "Missing Path", "Please select a checkpoint (or a folder in Batch mode).")
            return None
        if batch_mode and not path.is_dir():
            QMessageBox.warning(self, "Batch Mode", "Batch mode is enabled-please select a folder.")
            return None
        if not batch_mode and not path.is_file():
            QMessageBox.warning(self, "Single Mode", "Batch mode is off-please select a .tsae file.")
            return None
        return path

    def _output_dir(self, fallback: Path, name: str) -> Path:
        text = self.le_output_dir.text().strip()
        return Path(text) if text else fallback / name

    # ---------- Sorting/filtering ----------
    def _update_counts_label(self, rows: list[MetricRow]) -> None:
        e = sum(1 for r in rows if r.level == Level.ERROR.value)
        w = sum(1 for r in rows if r.level == Level.WARNING.value)
        i = sum(1 for r in rows if r.level == Level.INFO.value)
        self.lbl_counts.setText(f"Errors: {e} | Warnings: {w} | Info: {i}")

    def _apply_filters(self, rows: list[MetricRow]) -> list[MetricRow]:
        shown = {
            Level.ERROR.value: self.cb_show_errors.isChecked(),
            Level.WARNING.value: self.cb_show_warnings.isChecked(),
            Level.INFO.value: self.cb_show_info.isChecked(),
        }
        return [r for r in rows if shown.get(r.level, True)]

    def _refresh_table_from_last(self):
        self.table.setRowCount(0)
        self._update_counts_label(self._last_rows)
        rows = self._apply_filters(self._last_rows)
        rows = sorted(rows, key=_level_rank)
        for r in rows:
            self._add_row(r)

    # ---------- Button actions ----------
    def _on_generate(self):
        path = self._checkpoint_path()
        if not path or self.cb_batch_mode.isChecked():
            if path:
                QMessageBox.information(self, "Generate", "Generate works on a single checkpoint.")
            return
        n, seed = self.sb_count.value(), self.sb_seed.value()
        out = self._output_dir(path.parent, f"generated_seed{seed}")
        try:
            ckpt = load_checkpoint(str(path))
            series = generate_batch(ckpt, n, seed)
            names = ckpt.stats.names() if ckpt.stats is not None else None
            files = []
            for s in series:
                files.append(write_csv_series(str(out / "normalized" / f"{s.label}.csv"), s, names))
                if ckpt.stats is not None and self.cb_denormalized.isChecked():
                    files.append(write_csv_series(str(out / "denormalized" / f"{s.label}.csv"), denormalize(s, ckpt.stats), names))
            manifest = write_generation_manifest(str(out), files, str(path), n, seed)
            self._log(f"Generated {n} series -> {out}")
            self._log(f"Manifest: {manifest}")
        except (TsaeError, OSError) as e:
            QMessageBox.critical(self, "Generate failed", str(e))
            self._log(f"Generate failed: {e!r}")

    def _on_evaluate(self):
        path = self._checkpoint_path()
        if not path:
            return
        data = self.le_dataset_dir.text().strip()
        if not data or not Path(data).is_dir():
            QMessageBox.warning(self, "Missing Data", "Please select the dataset folder.")
            return
        n, seed = self.sb_count.value(), self.sb_seed.value()
        self._log("Evaluate started...")
        try:
            if self.cb_batch_mode.isChecked():
                self._run_batch(path, data, n, seed)
            else:
                ckpt = load_checkpoint(str(path))
                dataset = load_dataset_dir(data, ckpt.sos_value, ckpt.stats)
                report = build_report(ckpt, dataset, n, seed)
                self._last_report = report
                self._last_checkpoint = str(path)
                self._last_dataset = data
                self._last_rows = metric_rows(report)
                self._log(f"Evaluate finished: {report.label}")
        except (TsaeError, OSError) as e:
            self._last_report = None
            self._last_rows = [MetricRow(level=Level.ERROR.value, metric="Evaluate", value="", note=f"failed: {e}")]
            self._log(f"Evaluate failed: {e!r}")
        self._refresh_table_from_last()

    def _run_batch(self, folder: Path, data: str, n: int, seed: int) -> None:
        out = self._output_dir(folder, "compare")
        summary = batch_evaluate(str(folder), load_dataset_dir(data), str(out), n, seed)
        rows: list[MetricRow] = []
        for entry in summary["files"]:
            name = Path(entry["checkpoint"]).name
            if entry["status"] != "OK":
                rows.append(MetricRow(level=Level.ERROR.value, metric=name, value="", note=entry["error"]))
                continue
            rows.append(
                MetricRow(
                    level=Level.INFO.value,
                    metric=f"{name} ({entry['label']})",
                    value=f"{entry['avg_dtw']:.3f} / {entry['entropy']:.3f} / {entry['test_error']:.4f}",
                    note="avg DTW / entropy / test error",
                )
            )
        self._last_report = None
        self._last_rows = rows
        self._log(f"Batch finished. Summary: {summary['summary_path']}")

    def _on_export(self):
        if self._last_report is None:
            QMessageBox.information(self, "Nothing to export", "Run Evaluate on a single checkpoint first.")
            return
        out = QFileDialog.getExistingDirectory(self, "Export report to folder", self.le_output_dir.text().strip())
        if not out:
            return
        try:
            paths = write_metrics_report(out, self._last_report, self._last_checkpoint, self._last_dataset)
            self._log(f"Exported report: {paths['report']}")
        except OSError as e:
            QMessageBox.critical(self, "Export failed", str(e))
            self._log(f"Export failed: {e!r}")
