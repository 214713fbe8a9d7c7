import json
import logging
from pathlib import Path

import numpy as np

from utils import config

logger = logging.getLogger(__name__)


def load_json_document(path):
    """Read a JSON document; malformed input raises ValueError with its position"""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"Malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def export_to_csv(df, filename):
    """Export dataframe to CSV with full double precision"""
    df.to_csv(filename, index=False, float_format=config.CSV_FLOAT_FORMAT)
    logger.info("wrote %s (%d rows)", filename, len(df))
    return filename


def export_to_json(doc, filename):
    """Export a report dict as sorted, indented JSON"""
    with open(filename, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("wrote %s", filename)
    return filename


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        return value.real if value.imag == 0 else {"re": value.real, "im": value.imag}
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def delta_rows_to_json(delta_rows):
    """Dirac part table (point, order, re, im) as a list of records"""
    records = []
    for row in delta_rows.itertuples(index=False):
        coefficient = row.re if row.im == 0 else {"re": row.re, "im": row.im}
        records.append({"point": float(row.point), "order": int(row.order), "coefficient": coefficient})
    return records


def get_residual_summary(diagnostics, tolerance=config.RESIDUAL_TOL):
    """Residual components against a tolerance"""
    piecewise = diagnostics.get("piecewise_sup", float("nan"))
    delta = diagnostics.get("delta_norm", float("nan"))
    within = bool(np.isfinite(piecewise) and np.isfinite(delta) and piecewise <= tolerance and delta <= tolerance)
    summary = {
        'piecewise_sup': piecewise,
        'delta_norm': delta,
        'ode_defect': diagnostics.get("ode_defect", float("nan")),
        'tolerance': tolerance,
        'within_tolerance': within
    }
    if not within and np.isfinite(piecewise):
        logger.warning("residual above tolerance: piecewise %.3g, delta %.3g (tol %.1g)", piecewise, delta, tolerance)
    return summary


def get_convergence_summary(report, final_tol=config.REG_FINAL_RESIDUAL_TOL, min_decay=config.REG_MIN_DECAY):
    """Summary of a convergence table (eps, residual, slope)"""
    if len(report) == 0:
        return None

    residuals = report['residual'].to_numpy()
    return {
        'Points': len(report),
        'Final eps': float(report['eps'].iloc[-1]),
        'Final residual': float(residuals[-1]),
        'Slope': float(report.attrs.get('slope', report['slope'].iloc[0])),
        'Monotone': bool(np.all(np.diff(residuals) <= 1e-15)),
        'Converged': bool(residuals[-1] <= final_tol and residuals[-1] <= residuals[0] / min_decay + 1e-12)
    }


def parse_schedule(text):
    """'3:10' gives 2^-3 .. 2^-10; otherwise a comma list of eps values"""
    text = text.strip()
    if ":" in text:
        first, last = (int(part) for part in text.split(":"))
        return [2.0 ** -k for k in range(first, last + 1)]
    return [float(part) for part in text.split(",") if part.strip()]


# ============================================================================
# DOCUMENT VALIDATION FUNCTIONS
# ============================================================================

def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_scalar_doc(value):
    if _is_number(value):
        return True
    return isinstance(value, dict) and set(value) <= {"re", "im"} and all(_is_number(v) for v in value.values())


def validate_problem_document(doc):
    """Validate an ODE problem document"""
    errors = []
    warnings = []

    if not isinstance(doc, dict):
        return {'valid': False, 'errors': ["Problem document must be a JSON object"], 'warnings': []}

    missing = [key for key in ("n", "a", "domain", "condition") if key not in doc]
    if missing:
        errors.append(f"Missing required fields: {', '.join(missing)}")

    n = doc.get("n")
    if "n" in doc and (not isinstance(n, int) or isinstance(n, bool) or n < 1):
        errors.append(f"Order n must be a positive integer, got {n!r}")
        n = None

    for side in ("a", "b"):
        coefficients = doc.get(side)
        if coefficients is None:
            continue
        if not isinstance(coefficients, list):
            errors.append(f"Coefficients '{side}' must be a list")
        elif isinstance(n, int) and len(coefficients) != n + 1:
            errors.append(f"Coefficients '{side}' need {n + 1} entries, got {len(coefficients)}")
    if "b" not in doc:
        warnings.append("No right coefficients 'b': taken as zero")

    domain = doc.get("domain")
    if domain is not None:
        if not (isinstance(domain, list) and len(domain) == 2 and all(_is_number(v) for v in domain)):
            errors.append("Domain must be a pair of numbers [lo, hi]")
        elif not domain[0] < domain[1]:
            errors.append(f"Empty domain [{domain[0]}, {domain[1]}]")

    condition = doc.get("condition")
    if condition is not None:
        if not isinstance(condition, dict):
            errors.append("Condition must be an object")
        elif condition.get("type") == "ivp":
            if not _is_number(condition.get("x0")):
                errors.append("IVP condition needs a numeric x0")
            C = condition.get("C")
            if not isinstance(C, list) or not all(_is_scalar_doc(v) for v in C):
                errors.append("IVP condition needs a list C of numbers")
            elif isinstance(n, int) and len(C) != n:
                errors.append(f"IVP condition needs {n} values, got {len(C)}")
        elif condition.get("type") == "bvp":
            rows = condition.get("rows")
            if not isinstance(rows, list) or not rows:
                errors.append("BVP condition needs a non-empty list of rows")
            else:
                for i, row in enumerate(rows):
                    if not isinstance(row, dict) or row.get("endpoint") not in ("lo", "hi"):
                        errors.append(f"BVP row {i}: endpoint must be 'lo' or 'hi'")
                    elif not isinstance(row.get("jet_order"), int) or row["jet_order"] < 0:
                        errors.append(f"BVP row {i}: jet_order must be a non-negative integer")
                    elif not _is_scalar_doc(row.get("value", 0.0)):
                        errors.append(f"BVP row {i}: value must be a number")
                if isinstance(n, int) and len(rows) != n:
                    warnings.append(f"{len(rows)} boundary rows for an order-{n} problem")
        else:
            errors.append(f"Unknown condition type: {condition.get('type')!r}")

    return {
        'valid': len(errors) == 0,
        'errors': errors,
        'warnings': warnings
    }


def validate_pair_document(doc):
    """Validate a regularization check document: a list of (coefficient, psi, t) triples"""
    errors = []
    warnings = []

    triples = doc.get("triples") if isinstance(doc, dict) else None
    if not isinstance(triples, list) or not triples:
        errors.append("Pair document needs a non-empty list 'triples'")
    else:
        for i, triple in enumerate(triples):
            if not isinstance(triple, dict):
                errors.append(f"Triple {i} must be an object")
                continue
            missing = [key for key in ("coefficient", "psi", "t") if key not in triple]
            if missing:
                errors.append(f"Triple {i}: missing {', '.join(missing)}")
            side = triple.get("side", "plus")
            if side not in ("plus", "minus"):
                errors.append(f"Triple {i}: side must be 'plus' or 'minus'")
            support = triple.get("support")
            if support is None:
                warnings.append(f"Triple {i}: no support given, using {list(config.WORKING_DOMAIN)}")
            elif not (isinstance(support, list) and len(support) == 2 and support[0] < support[1]):
                errors.append(f"Triple {i}: support must be [lo, hi] with lo < hi")

    return {
        'valid': len(errors) == 0,
        'errors': errors,
        'warnings': warnings
    }


def check_validation(result):
    """Raise on a failed validation report, log its warnings"""
    for warning in result['warnings']:
        logger.warning(warning)
    if not result['valid']:
        raise ValueError(f"Validation failed: {', '.join(result['errors'])}")
    return result


def solution_frame_summary(table):
    """Row count and x range of a sampled solution table"""
    if len(table) == 0:
        return {'Rows': 0, 'x range': "N/A"}
    return {
        'Rows': len(table),
        'x range': f"{table['x'].min():.6g} .. {table['x'].max():.6g}",
        'Lateral rows': int((table['side'] != "").sum()) if 'side' in table.columns else 0
    }
