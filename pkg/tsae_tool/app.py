import sys
from PySide6.QtWidgets import QApplication
from tsae_tool.ui.main_window import MainWindow


def run_app():
    app = QApplication.instance() or QApplication(sys.argv)
    win = MainWindow()
    win.show()
    sys.exit(app.exec())
