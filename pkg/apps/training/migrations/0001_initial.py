# Generated by Django 5.2.11 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('kind', models.CharField(choices=[('PRETRAIN', 'Pretrain'), ('FINETUNE_DIFF', 'Finetune diff'), ('BASELINE', 'Baseline'), ('FINETUNE_MASK', 'Fixed-mask finetune'), ('SWEEP_CELL', 'Sweep cell')], max_length=20)),
                ('task', models.CharField(blank=True, max_length=100)),
                ('method', models.CharField(blank=True, max_length=50)),
                ('seed', models.IntegerField(default=0)),
                ('config', models.JSONField(blank=True, default=dict)),
                ('status', models.CharField(choices=[('PENDING', 'Pending'), ('RUNNING', 'Running'), ('COMPLETED', 'Completed'), ('FAILED', 'Failed')], default='PENDING', max_length=10)),
                ('artifact_path', models.CharField(blank=True, max_length=500)),
                ('error_message', models.TextField(blank=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('completed_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
                'indexes': [models.Index(fields=['kind', 'status'], name='training_run_kind_status'), models.Index(fields=['task', 'method'], name='training_run_task_method')],
            },
        ),
        migrations.CreateModel(
            name='EpochMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('phase', models.CharField(max_length=20)),
                ('epoch', models.PositiveIntegerField()),
                ('train_loss', models.FloatField()),
                ('val_accuracy', models.FloatField(blank=True, null=True)),
                ('expected_l0', models.FloatField(blank=True, null=True)),
                ('wall_seconds', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='epochs', to='training.trainingrun')),
            ],
            options={
                'ordering': ['run', 'id'],
                'unique_together': {('run', 'phase', 'epoch')},
            },
        ),
    ]
