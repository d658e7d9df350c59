# Generated by Django 6.0.2 on 2026-10-18 09:12

import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('run_id', models.AutoField(primary_key=True, serialize=False)),
                ('name', models.CharField(max_length=100)),
                ('seed', models.IntegerField(validators=[django.core.validators.MinValueValidator(0)])),
                ('n', models.IntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('m', models.IntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('config', models.JSONField()),
                ('class_names', models.JSONField(default=list)),
                ('output_dir', models.CharField(blank=True, default='', max_length=500)),
                ('last_accuracy', models.FloatField(validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(1)])),
                ('average_incremental_accuracy', models.FloatField(validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(1)])),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['-created_at', '-run_id'],
                'indexes': [models.Index(fields=['name'], name='mgrb_run_name_idx'), models.Index(fields=['seed', 'n', 'm'], name='mgrb_run_split_idx')],
            },
        ),
        migrations.CreateModel(
            name='PhaseRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('phase', models.IntegerField(validators=[django.core.validators.MinValueValidator(0)])),
                ('n_old', models.IntegerField(validators=[django.core.validators.MinValueValidator(0)])),
                ('n_new', models.IntegerField(validators=[django.core.validators.MinValueValidator(1)])),
                ('accuracy', models.FloatField(validators=[django.core.validators.MinValueValidator(0), django.core.validators.MaxValueValidator(1)])),
                ('old_accuracy', models.FloatField(blank=True, null=True)),
                ('new_accuracy', models.FloatField(blank=True, null=True)),
                ('average_incremental_accuracy', models.FloatField(blank=True, null=True)),
                ('per_class_accuracy', models.JSONField(default=list)),
                ('confusion', models.JSONField(default=list)),
                ('train_counts', models.JSONField(default=list)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='phases', to='mgrb.experimentrun')),
            ],
            options={
                'ordering': ['run', 'phase'],
                'constraints': [models.UniqueConstraint(fields=('run', 'phase'), name='mgrb_unique_run_phase')],
            },
        ),
    ]
