"""File writers shared by the tests."""


def write_ascii_ply(path, vertices, faces=None, labels=None, label_type="uchar"):
    lines = ["ply", "format ascii 1.0", f"element vertex {len(vertices)}",
             "property float x", "property float y", "property float z"]
    if labels is not None:
        lines.append(f"property {label_type} label")
    if faces is not None:
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    for i, v in enumerate(vertices):
        row = " ".join(str(c) for c in v)
        if labels is not None:
            row += f" {labels[i]}"
        lines.append(row)
    for f in faces or []:
        lines.append(" ".join(str(x) for x in [len(f), *f]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_asc(path, ncols, nrows, rows, cellsize=30, x0=0, y0=0, nodata=-9999):
    text = (f"ncols {ncols}\nnrows {nrows}\nxllcorner {x0}\nyllcorner {y0}\n"
            f"cellsize {cellsize}\nNODATA_value {nodata}\n")
    text += "\n".join(" ".join(str(v) for v in row) for row in rows) + "\n"
    path.write_text(text)
    return path




# Acceptance results, printed again in the terminal summary.
CRITERIA = []


def record_criterion(number, title, ok, detail=""):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
    if detail:
        line += f" [{detail}]"
    CRITERIA.append(line)
    print(line, flush=True)
    return ok
