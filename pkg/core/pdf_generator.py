import logging

from fpdf import FPDF

from config import APP_NAME, APP_VERSION
from core.errors import EmptyResultError
from core.sweep import SweepResult, optimal_n
from utils.file_utils import safe_remove_file

logger = logging.getLogger(__name__)


def _latin1(line: str) -> str:
    return line.encode("latin-1", errors="replace").decode("latin-1")


def _fmt(value, digits: int = 3) -> str:
    if value is None or value == "":
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


class SweepReportGenerator:
    """
    Renders a sweep result as a short PDF: provenance, the optimum, one
    summary line per N and the full budget table.
    """

    def __init__(self, config_sha256: str = ""):
        self.config_sha256 = config_sha256
        logger.debug("SweepReportGenerator initialized.")

    def report_lines(self, result: SweepResult):
        """(style, text) pairs; style is one of title, heading, body, mono."""
        lines = [("title", f"{APP_NAME} sweep report"),
                 ("body", f"Version {APP_VERSION}")]
        if self.config_sha256:
            lines.append(("body", f"Config sha256 {self.config_sha256}"))

        lines.append(("heading", "Optimum"))
        try:
            best_N, T_star, n_star = optimal_n(result)
            lines.append(("body", f"Best N = {best_N:g} at T = {T_star * 1e3:.3f} ms, "
                                  f"total excitation {n_star:.3f} quanta"))
        except EmptyResultError:
            lines.append(("body", "No successful cells"))

        lines.append(("heading", "Per N"))
        for N in sorted(result.N_values):
            info = result.per_N.get(N)
            if info is None or info.argmin is None:
                lines.append(("body", f"N = {N:g}: no successful cells"))
                continue
            text = f"N = {N:g}: minimum {info.argmin[1]:.3f} quanta at {info.argmin[0] * 1e3:.3f} ms"
            if info.crossover is not None:
                text += (f"; crossover at {info.crossover.T_star * 1e3:.3f} ms, "
                         f"{info.crossover.n_at_crossover:.3f} quanta, "
                         f"{info.crossover.cycles_at_crossover:.0f} cycles")
            else:
                text += "; curves do not cross"
            if not info.single_interior_minimum:
                text += " (no unique interior minimum)"
            lines.append(("body", text))

        header, rows = result.rows()
        lines.append(("heading", "Budget table"))
        lines.append(("mono", "  ".join(f"{h:>11}" for h in header)))
        for row in rows:
            lines.append(("mono", "  ".join(f"{_fmt(v):>11}" for v in row)))
        return lines

    def generate_pdf(self, result: SweepResult, output_path) -> bool:
        try:
            pdf = FPDF()
            pdf.set_auto_page_break(auto=True, margin=15)
            pdf.add_page()
            for style, text in self.report_lines(result):
                safe_line = _latin1(text)
                if style == "title":
                    pdf.set_font("Arial", style="B", size=16)
                    pdf.multi_cell(0, 10, safe_line)
                elif style == "heading":
                    pdf.ln(4)
                    pdf.set_font("Arial", style="B", size=12)
                    pdf.multi_cell(0, 8, safe_line)
                elif style == "mono":
                    pdf.set_font("Courier", size=7)
                    pdf.multi_cell(0, 4, safe_line)
                else:
                    pdf.set_font("Arial", size=10)
                    pdf.multi_cell(0, 6, safe_line)
            pdf.output(str(output_path))
            logger.info(f"PDF sweep report saved: {output_path}")
            return True
        except Exception as e:
            logger.error(f"Error generating PDF: {e}")
            safe_remove_file(output_path)
            return False
