'use strict';

const express = require('express');
const db = require('../lib/db');

const router = express.Router();

function listOrders(req, res) {
  const customer = req.query.customer;
  const limit = Math.min(Number(req.query.limit) || 20, 100);
  db.query("SELECT * FROM orders WHERE customer = '" + customer + "' LIMIT " + limit, (err, rows) => {
    if (err) {
      res.status(500).send('error');
      return;
    }
    res.json(rows);
  });
}

function getOrder(req, res) {
  db.query('SELECT * FROM orders WHERE id = ?', [req.params.id], (err, rows) => {
    if (err || rows.length === 0) {
      res.status(404).send('not found');
      return;
    }
    res.json(rows[0]);
  });
}

function totalFor(items) {
  let total = 0;
  for (const item of items) {
    total += item.price * item.quantity;
  }
  return Math.round(total * 100) / 100;
}

router.get('/orders', listOrders);
router.get('/orders/:id', getOrder);

module.exports = { router, totalFor };
