"""
Evaluation commands.

This module provides the command that scores a detection dump against a
directory of annotations.
"""

import click
from flask.cli import with_appcontext

from app.commands import cli_errors


@click.command('evaluate')
@click.argument('annotations', type=click.Path(file_okay=False))
@click.argument('detections', type=click.Path(dir_okay=False))
@click.option('--iou', 'iou_thresh', type=click.FloatRange(0.0, 1.0), default=0.5,
              help='IoU threshold for precision, recall, AP and the confusion matrix')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Directory for the metrics files')
@click.option('--counts', default=None, metavar='METAL,BOARD,PLASTIC',
              help='Class counts for the random baselines (defaults to the annotation counts)')
@with_appcontext
def evaluate_command(annotations, detections, iou_thresh, out_dir, counts):
    """
    Evaluate detections against YOLO annotations.

    ANNOTATIONS is a directory of label files, DETECTIONS a CSV dump.
    """
    from app.models.material import MATERIAL_CLASSES
    from app.services.annotation_service import (
        format_metrics_table, read_detections_csv, read_yolo_labels, write_metrics
    )
    from app.services.metrics_service import detection_rate_vs_iou, evaluate

    class_counts = None
    if counts:
        try:
            values = [int(v) for v in counts.split(',')]
        except ValueError:
            raise click.BadParameter('expected three integers', param_hint='--counts')
        if len(values) != len(MATERIAL_CLASSES):
            raise click.BadParameter('expected three integers', param_hint='--counts')
        class_counts = dict(zip(MATERIAL_CLASSES, values))

    with cli_errors():
        gts, frame_names = read_yolo_labels(annotations)
        dets = read_detections_csv(detections, frame_names)
        report = evaluate(dets, gts, iou_thresh, class_counts)
        rates = detection_rate_vs_iou(dets, gts)

    click.echo(format_metrics_table(report, rates), nl=False)
    if out_dir:
        paths = write_metrics(report, out_dir, rates)
        click.echo('')
        for name, path in paths.items():
            click.echo(f"  {name:<18}{path}")


def register_evaluate_commands(app):
    """Register evaluation CLI commands with the Flask application."""
    app.cli.add_command(evaluate_command)
